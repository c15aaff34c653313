def find_tall_people(people, height):
    tall_people = []
    for person in people:
        if person[height] > 180:
            tall_people.append(person)
    return tall_people
