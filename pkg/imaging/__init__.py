"""Frame I/O, morphology and connected-region machinery."""
