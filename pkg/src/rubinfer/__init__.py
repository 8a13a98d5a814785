"""Incremental planar SLAM smoothing that reuses planning-time factorizations."""
