# phantom package
