def find_delicious_apples(apples,color,size):
    delicious_apples = []
    for apl in apples:
        if apl[color]=='red' and apl[size]>10:
            delicious_apples.append(apl)
    return delicious_apples
