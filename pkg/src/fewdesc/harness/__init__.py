"""Data ingestion, synthetic pools, verification suites and the CLI."""
