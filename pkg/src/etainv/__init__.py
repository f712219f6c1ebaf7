"""Time- and region-dependent eta DDIM inversion on analytic diffusion oracles."""
