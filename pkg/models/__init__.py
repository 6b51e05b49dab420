"""The three learned stages and the artificial event generator that trains the second."""
