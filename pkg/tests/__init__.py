# Tests package for the language network trainer
