# Core package for the Deep Language Network trainer
