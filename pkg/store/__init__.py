# store package
