"""HTTP service wrapping the pipeline: pydantic request/response models and
the FastAPI application. The CLI calls the same handlers in process."""
