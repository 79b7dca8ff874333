"""Command-line harness: generation, training, decoding, sweeps and repro bundles."""
