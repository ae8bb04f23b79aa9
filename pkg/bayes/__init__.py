# bayes package
