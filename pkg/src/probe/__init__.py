"""Latent-stability adversarial probe: perturbation, PGD, bisection and per-sample scoring."""
