def find_heavy_boxes(boxes, weight):
    heavy_boxes = []
    for box in boxes:
        if box[weight] > 50:
            heavy_boxes.append(box)
    return heavy_boxes
