"""Tensors, autodiff, layers and the optimizer shared by the three models."""
