# group package
