//! Criterion benchmarks for the detection and classification pipeline.
