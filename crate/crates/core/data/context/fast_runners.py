def find_fast_runners(people, speed):
    fast_runners = []
    for person in people:
        if person[speed] > 20:
            fast_runners.append(person)
    return fast_runners
