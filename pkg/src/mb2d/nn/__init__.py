"""Minimal neural-network core: array kernels, reverse-mode tape, U-Net, Adam."""
