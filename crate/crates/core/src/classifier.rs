//! Learned bias classifier: logistic regression over hashed code features.
//!
//! Features are token unigrams, adjacent-token bigrams, and normalized string
//! literal values, hashed with FNV-1a into a fixed 2^20 bucket space so a
//! saved model stays valid regardless of vocabulary drift. Training is plain
//! SGD with inverse-frequency class weights, a seeded per-epoch shuffle, and
//! best-epoch selection on dev accuracy.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::analyzer::{normalize_value, tokenize, TokenKind};
use crate::corpus::hex_prefix;
use crate::error::{Error, Result};

/// log2 of the feature space size every model uses.
pub const FEATURE_BITS: u32 = 20;

const MODEL_FORMAT: &str = "codebias-classifier";
const MODEL_VERSION: u32 = 1;

/// FNV-1a 64-bit hash; hand-rolled so hashed feature indices are stable
/// across platforms and releases.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut hash: u64 = 0xcbf29ce484222325;
    for &b in bytes {
        hash ^= b as u64;
        hash = hash.wrapping_mul(0x100000001b3);
    }
    hash
}

/// Sparse feature vector: parallel arrays sorted by index, no duplicates.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector {
    pub indices: Vec<u32>,
    pub values: Vec<f64>,
}

impl FeatureVector {
    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }
}

/// Hashes one code snippet into feature counts.
pub fn featurize(code: &str, feature_bits: u32) -> FeatureVector {
    let mask = (1u64 << feature_bits) - 1;
    let tokens = tokenize(code);
    let mut counts: BTreeMap<u32, f64> = BTreeMap::new();
    let mut bump = |name: String| {
        let index = (fnv1a64(name.as_bytes()) & mask) as u32;
        *counts.entry(index).or_default() += 1.0;
    };
    let lowered: Vec<String> = tokens.iter().map(|t| t.text.to_lowercase()).collect();
    for text in &lowered {
        bump(format!("U:{text}"));
    }
    for pair in lowered.windows(2) {
        bump(format!("B:{}\u{1f}{}", pair[0], pair[1]));
    }
    for token in &tokens {
        if token.kind == TokenKind::StringLiteral {
            let normalized = normalize_value(token.literal_value.as_deref().unwrap_or(""));
            bump(format!("LIT:{normalized}"));
        }
    }
    let (indices, values) = counts.into_iter().unzip();
    FeatureVector { indices, values }
}

/// One training or evaluation example.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledCode {
    pub code: String,
    pub biased: bool,
}

pub fn write_labeled_jsonl(examples: &[LabeledCode], path: &Path) -> Result<()> {
    crate::jsonl::write_lines(path, examples)
}

pub fn read_labeled_jsonl(path: &Path) -> Result<Vec<LabeledCode>> {
    crate::jsonl::read_lines(path)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: u32,
    pub learning_rate: f64,
    pub l2: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 30,
            learning_rate: 0.5,
            l2: 1e-6,
            seed: 42,
        }
    }
}

/// Logistic regression over the hashed feature space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierModel {
    feature_bits: u32,
    bias: f64,
    weights: BTreeMap<u32, f64>,
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

impl ClassifierModel {
    /// A valid model with no learned weights; predicts 0.5 everywhere.
    pub fn zeroed(feature_bits: u32) -> Result<Self> {
        if feature_bits == 0 || feature_bits > 30 {
            return Err(Error::Model(format!(
                "feature_bits must be 1..=30, got {feature_bits}"
            )));
        }
        Ok(ClassifierModel {
            feature_bits,
            bias: 0.0,
            weights: BTreeMap::new(),
        })
    }

    pub fn feature_bits(&self) -> u32 {
        self.feature_bits
    }

    fn raw_score(&self, features: &FeatureVector) -> f64 {
        let mut z = self.bias;
        for (index, value) in features.indices.iter().zip(&features.values) {
            if let Some(w) = self.weights.get(index) {
                z += w * value;
            }
        }
        z
    }

    /// Confidence that `code` is biased, in (0, 1).
    pub fn predict_confidence(&self, code: &str) -> f64 {
        sigmoid(self.raw_score(&featurize(code, self.feature_bits)))
    }

    /// Content hash of the learned parameters.
    pub fn fingerprint(&self) -> String {
        let mut hasher = Sha256::new();
        hasher.update(self.feature_bits.to_le_bytes());
        hasher.update(self.bias.to_le_bytes());
        for (index, weight) in &self.weights {
            hasher.update(index.to_le_bytes());
            hasher.update(weight.to_le_bytes());
        }
        hex_prefix(&hasher.finalize(), 12)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let container = ModelContainer {
            format: MODEL_FORMAT.to_string(),
            version: MODEL_VERSION,
            feature_bits: self.feature_bits,
            bias: self.bias,
            weights: self.weights.iter().map(|(i, w)| (*i, *w)).collect(),
        };
        let json = serde_json::to_string_pretty(&container)
            .map_err(|e| Error::json(path.display().to_string(), e))?;
        fs::write(path, json).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let raw = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let container: ModelContainer = serde_json::from_str(&raw)
            .map_err(|_| Error::Model(format!("{}: not a classifier model file", path.display())))?;
        if container.format != MODEL_FORMAT {
            return Err(Error::Model(format!(
                "{}: unexpected format `{}`",
                path.display(),
                container.format
            )));
        }
        if container.version != MODEL_VERSION {
            return Err(Error::Model(format!(
                "{}: unsupported version {}",
                path.display(),
                container.version
            )));
        }
        let mut model = ClassifierModel::zeroed(container.feature_bits)?;
        model.bias = container.bias;
        let limit = 1u64 << container.feature_bits;
        for (index, weight) in container.weights {
            if (index as u64) >= limit {
                return Err(Error::Model(format!(
                    "{}: weight index {index} outside feature space",
                    path.display()
                )));
            }
            model.weights.insert(index, weight);
        }
        Ok(model)
    }
}

#[derive(Serialize, Deserialize)]
struct ModelContainer {
    format: String,
    version: u32,
    feature_bits: u32,
    bias: f64,
    weights: Vec<(u32, f64)>,
}

/// Per-class multipliers that rebalance a skewed label distribution:
/// `n / (2 * n_class)` for each class.
pub fn class_weights(examples: &[LabeledCode]) -> Result<(f64, f64)> {
    let n = examples.len() as f64;
    let n_pos = examples.iter().filter(|e| e.biased).count() as f64;
    let n_neg = n - n_pos;
    if n_pos == 0.0 || n_neg == 0.0 {
        return Err(Error::Training(
            "training data must contain both biased and acceptable examples".into(),
        ));
    }
    Ok((n / (2.0 * n_pos), n / (2.0 * n_neg)))
}

/// Weighted mean cross-entropy over a batch plus an L2 penalty on the weights
/// (bias excluded). Shared by training diagnostics and the gradient check.
pub fn batch_loss(
    weights: &BTreeMap<u32, f64>,
    bias: f64,
    batch: &[(FeatureVector, bool)],
    (weight_pos, weight_neg): (f64, f64),
    l2: f64,
) -> f64 {
    let mut loss = 0.0;
    for (features, biased) in batch {
        let mut z = bias;
        for (index, value) in features.indices.iter().zip(&features.values) {
            if let Some(w) = weights.get(index) {
                z += w * value;
            }
        }
        let p = sigmoid(z);
        let (target, class_weight) = if *biased {
            (1.0, weight_pos)
        } else {
            (0.0, weight_neg)
        };
        let p_clamped = p.clamp(1e-12, 1.0 - 1e-12);
        loss -= class_weight * (target * p_clamped.ln() + (1.0 - target) * (1.0 - p_clamped).ln());
    }
    let penalty: f64 = weights.values().map(|w| w * w).sum();
    loss / batch.len() as f64 + 0.5 * l2 * penalty
}

/// Analytic gradient of [`batch_loss`] with respect to every touched weight
/// and the bias term.
pub fn batch_gradient(
    weights: &BTreeMap<u32, f64>,
    bias: f64,
    batch: &[(FeatureVector, bool)],
    (weight_pos, weight_neg): (f64, f64),
    l2: f64,
) -> (BTreeMap<u32, f64>, f64) {
    let mut grad: BTreeMap<u32, f64> = BTreeMap::new();
    let mut grad_bias = 0.0;
    for (features, biased) in batch {
        let mut z = bias;
        for (index, value) in features.indices.iter().zip(&features.values) {
            if let Some(w) = weights.get(index) {
                z += w * value;
            }
        }
        let p = sigmoid(z);
        let (target, class_weight) = if *biased {
            (1.0, weight_pos)
        } else {
            (0.0, weight_neg)
        };
        let residual = class_weight * (p - target);
        grad_bias += residual;
        for (index, value) in features.indices.iter().zip(&features.values) {
            *grad.entry(*index).or_default() += residual * value;
        }
    }
    let n = batch.len() as f64;
    for g in grad.values_mut() {
        *g /= n;
    }
    for (index, w) in weights {
        *grad.entry(*index).or_default() += l2 * w;
    }
    (grad, grad_bias / n)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: u32,
    pub train_loss: f64,
    pub dev_accuracy: f64,
}

#[derive(Debug, Clone)]
pub struct TrainedModel {
    pub model: ClassifierModel,
    pub best_epoch: u32,
    pub history: Vec<EpochStats>,
}

/// Trains a classifier with SGD, checkpointing the epoch with the best dev
/// accuracy (earliest epoch wins ties). L2 is applied as end-of-epoch weight
/// decay, approximating the full-batch penalty in [`batch_loss`].
pub fn train(
    train_set: &[LabeledCode],
    dev_set: &[LabeledCode],
    config: &TrainConfig,
) -> Result<TrainedModel> {
    if train_set.len() < 2 {
        return Err(Error::Training(format!(
            "need at least 2 training examples, got {}",
            train_set.len()
        )));
    }
    if dev_set.is_empty() {
        return Err(Error::Training("dev set is empty".into()));
    }
    if config.epochs == 0 {
        return Err(Error::Training("epochs must be at least 1".into()));
    }
    if !(config.learning_rate > 0.0) || !(config.l2 >= 0.0) {
        return Err(Error::Training(format!(
            "learning_rate must be positive and l2 non-negative, got {} / {}",
            config.learning_rate, config.l2
        )));
    }
    let weights_by_class = class_weights(train_set)?;

    let featurized: Vec<(FeatureVector, bool)> = train_set
        .iter()
        .map(|e| (featurize(&e.code, FEATURE_BITS), e.biased))
        .collect();
    let mut model = ClassifierModel::zeroed(FEATURE_BITS)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..featurized.len()).collect();

    let mut best: Option<(f64, u32, ClassifierModel)> = None;
    let mut history = Vec::with_capacity(config.epochs as usize);
    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        for &i in &order {
            let (features, biased) = &featurized[i];
            let p = sigmoid(model.raw_score(features));
            let (target, class_weight) = if *biased {
                (1.0, weights_by_class.0)
            } else {
                (0.0, weights_by_class.1)
            };
            let residual = class_weight * (p - target);
            model.bias -= config.learning_rate * residual;
            for (index, value) in features.indices.iter().zip(&features.values) {
                *model.weights.entry(*index).or_default() -=
                    config.learning_rate * residual * value;
            }
        }
        if config.l2 > 0.0 {
            let decay = 1.0 - config.learning_rate * config.l2;
            for w in model.weights.values_mut() {
                *w *= decay;
            }
        }
        let train_loss = batch_loss(
            &model.weights,
            model.bias,
            &featurized,
            weights_by_class,
            config.l2,
        );
        let dev_accuracy = evaluate_accuracy(&model, dev_set)?;
        history.push(EpochStats {
            epoch,
            train_loss,
            dev_accuracy,
        });
        let improved = match &best {
            None => true,
            Some((best_acc, _, _)) => dev_accuracy > *best_acc,
        };
        if improved {
            best = Some((dev_accuracy, epoch, model.clone()));
        }
    }
    let (_, best_epoch, model) = best.expect("at least one epoch ran");
    Ok(TrainedModel {
        model,
        best_epoch,
        history,
    })
}

/// Percentage of examples where the thresholded confidence agrees with the label.
pub fn evaluate_accuracy(model: &ClassifierModel, examples: &[LabeledCode]) -> Result<f64> {
    if examples.is_empty() {
        return Err(Error::Input("cannot evaluate accuracy on zero examples".into()));
    }
    let correct = examples
        .iter()
        .filter(|e| (model.predict_confidence(&e.code) >= 0.5) == e.biased)
        .count();
    Ok(100.0 * correct as f64 / examples.len() as f64)
}

/// Percentage of examples labeled biased by always predicting the majority class.
pub fn majority_baseline(examples: &[LabeledCode]) -> Result<f64> {
    if examples.is_empty() {
        return Err(Error::Input("cannot compute a baseline on zero examples".into()));
    }
    let biased = examples.iter().filter(|e| e.biased).count();
    let majority = biased.max(examples.len() - biased);
    Ok(100.0 * majority as f64 / examples.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn biased_example(value: &str) -> LabeledCode {
        LabeledCode {
            code: format!(
                "    out = []\n    for person in people:\n        if person[ethnicity] == '{value}':\n            out.append(person)\n    return out"
            ),
            biased: true,
        }
    }

    fn acceptable_example(attribute: &str) -> LabeledCode {
        LabeledCode {
            code: format!(
                "    out = []\n    for person in people:\n        if person[{attribute}] == target:\n            out.append(person)\n    return out"
            ),
            biased: false,
        }
    }

    fn tiny_sets() -> (Vec<LabeledCode>, Vec<LabeledCode>) {
        let train = vec![
            biased_example("White"),
            biased_example("black"),
            biased_example("asian"),
            biased_example("Muslim"),
            acceptable_example("ethnicity"),
            acceptable_example("religion"),
            acceptable_example("age"),
            acceptable_example("gender"),
        ];
        let dev = vec![
            biased_example("hispanic"),
            biased_example("White"),
            acceptable_example("politics"),
            acceptable_example("ethnicity"),
        ];
        (train, dev)
    }

    #[test]
    fn fnv1a64_known_vectors() {
        assert_eq!(fnv1a64(b""), 0xcbf29ce484222325);
        assert_eq!(fnv1a64(b"a"), 0xaf63dc4c8601ec8c);
        assert_eq!(fnv1a64(b"foobar"), 0x85944171f73967e8);
    }

    #[test]
    fn featurize_is_sparse_sorted_and_deterministic() {
        let code = "    if person[ethnicity] == 'White':\n        out.append(person)";
        let a = featurize(code, FEATURE_BITS);
        let b = featurize(code, FEATURE_BITS);
        assert_eq!(a, b);
        assert!(!a.is_empty());
        assert!(a.indices.windows(2).all(|w| w[0] < w[1]));
        assert!(a
            .indices
            .iter()
            .all(|i| (*i as u64) < (1u64 << FEATURE_BITS)));
        assert_eq!(a.indices.len(), a.values.len());
    }

    #[test]
    fn repeated_tokens_accumulate_counts() {
        let fv = featurize("x x x", FEATURE_BITS);
        assert!(fv.values.iter().any(|v| *v == 3.0));
    }

    #[test]
    fn zeroed_model_predicts_half() {
        let model = ClassifierModel::zeroed(FEATURE_BITS).unwrap();
        assert_eq!(model.predict_confidence("anything at all"), 0.5);
    }

    #[test]
    fn zero_feature_bits_is_rejected() {
        assert!(matches!(ClassifierModel::zeroed(0), Err(Error::Model(_))));
        assert!(matches!(ClassifierModel::zeroed(31), Err(Error::Model(_))));
    }

    #[test]
    fn training_separates_a_tiny_set() {
        let (train_set, dev_set) = tiny_sets();
        let trained = train(&train_set, &dev_set, &TrainConfig::default()).unwrap();
        assert_eq!(evaluate_accuracy(&trained.model, &dev_set).unwrap(), 100.0);
        assert!(trained.model.predict_confidence(&biased_example("black").code) > 0.5);
        assert!(trained.model.predict_confidence(&acceptable_example("age").code) < 0.5);
        assert_eq!(trained.history.len(), 30);
    }

    #[test]
    fn training_is_deterministic_per_seed() {
        let (train_set, dev_set) = tiny_sets();
        let a = train(&train_set, &dev_set, &TrainConfig::default()).unwrap();
        let b = train(&train_set, &dev_set, &TrainConfig::default()).unwrap();
        assert_eq!(a.model.fingerprint(), b.model.fingerprint());
        assert_eq!(a.best_epoch, b.best_epoch);
    }

    #[test]
    fn single_class_training_is_rejected() {
        let only_biased: Vec<LabeledCode> =
            vec![biased_example("White"), biased_example("black")];
        let dev = vec![acceptable_example("age")];
        assert!(matches!(
            train(&only_biased, &dev, &TrainConfig::default()),
            Err(Error::Training(_))
        ));
    }

    #[test]
    fn undersized_inputs_are_rejected() {
        let (train_set, dev_set) = tiny_sets();
        assert!(matches!(
            train(&train_set[..1], &dev_set, &TrainConfig::default()),
            Err(Error::Training(_))
        ));
        assert!(matches!(
            train(&train_set, &[], &TrainConfig::default()),
            Err(Error::Training(_))
        ));
        assert!(matches!(
            train(
                &train_set,
                &dev_set,
                &TrainConfig {
                    epochs: 0,
                    ..TrainConfig::default()
                }
            ),
            Err(Error::Training(_))
        ));
    }

    #[test]
    fn save_load_round_trip_preserves_predictions() {
        let (train_set, dev_set) = tiny_sets();
        let trained = train(&train_set, &dev_set, &TrainConfig::default()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.json");
        trained.model.save(&path).unwrap();
        let loaded = ClassifierModel::load(&path).unwrap();
        assert_eq!(loaded, trained.model);
        assert_eq!(loaded.fingerprint(), trained.model.fingerprint());
        let probe = biased_example("Muslim").code;
        assert_eq!(
            loaded.predict_confidence(&probe).to_bits(),
            trained.model.predict_confidence(&probe).to_bits()
        );
    }

    #[test]
    fn load_rejects_corrupt_and_foreign_files() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.json");
        std::fs::write(&path, "not json").unwrap();
        assert!(matches!(ClassifierModel::load(&path), Err(Error::Model(_))));
        std::fs::write(
            &path,
            r#"{"format":"something-else","version":1,"feature_bits":20,"bias":0.0,"weights":[]}"#,
        )
        .unwrap();
        assert!(matches!(ClassifierModel::load(&path), Err(Error::Model(_))));
        std::fs::write(
            &path,
            r#"{"format":"codebias-classifier","version":9,"feature_bits":20,"bias":0.0,"weights":[]}"#,
        )
        .unwrap();
        assert!(matches!(ClassifierModel::load(&path), Err(Error::Model(_))));
        std::fs::write(
            &path,
            r#"{"format":"codebias-classifier","version":1,"feature_bits":4,"bias":0.0,"weights":[[16,1.0]]}"#,
        )
        .unwrap();
        assert!(matches!(ClassifierModel::load(&path), Err(Error::Model(_))));
    }

    #[test]
    fn gradient_matches_central_differences_on_a_small_batch() {
        let (train_set, _) = tiny_sets();
        let batch: Vec<(FeatureVector, bool)> = train_set
            .iter()
            .map(|e| (featurize(&e.code, FEATURE_BITS), e.biased))
            .collect();
        let cw = class_weights(&train_set).unwrap();
        let l2 = 1e-3;
        let mut weights: BTreeMap<u32, f64> = BTreeMap::new();
        for (i, (fv, _)) in batch.iter().enumerate() {
            for (j, index) in fv.indices.iter().enumerate() {
                weights.insert(*index, 0.01 * ((i + j) as f64 % 7.0 - 3.0));
            }
        }
        let bias = 0.1;
        let (grad, grad_bias) = batch_gradient(&weights, bias, &batch, cw, l2);
        let h = 1e-5;
        for index in weights.keys().copied().take(40) {
            let mut plus = weights.clone();
            *plus.get_mut(&index).unwrap() += h;
            let mut minus = weights.clone();
            *minus.get_mut(&index).unwrap() -= h;
            let numeric = (batch_loss(&plus, bias, &batch, cw, l2)
                - batch_loss(&minus, bias, &batch, cw, l2))
                / (2.0 * h);
            let analytic = grad[&index];
            assert!(
                (numeric - analytic).abs() <= 1e-6 * (1.0 + numeric.abs().max(analytic.abs())),
                "weight {index}: numeric {numeric} vs analytic {analytic}"
            );
        }
        let numeric_bias = (batch_loss(&weights, bias + h, &batch, cw, l2)
            - batch_loss(&weights, bias - h, &batch, cw, l2))
            / (2.0 * h);
        assert!((numeric_bias - grad_bias).abs() <= 1e-6 * (1.0 + numeric_bias.abs()));
    }

    #[test]
    fn majority_baseline_reflects_label_skew() {
        let examples = vec![
            biased_example("White"),
            biased_example("black"),
            biased_example("asian"),
            acceptable_example("age"),
        ];
        assert_eq!(majority_baseline(&examples).unwrap(), 75.0);
    }
}
