"""HTTP service around the core package: request/response schemas,
task handlers shared with the CLI, and the FastAPI app."""
