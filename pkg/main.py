import logging
from fastapi import FastAPI
from eegdec.api import inference, runs
from eegdec.config import LOG_FORMAT, settings

# Configure logging
logging.basicConfig(
    level=logging.DEBUG if settings.DEBUG else logging.INFO,
    format=LOG_FORMAT
)

app = FastAPI(title="EEG Speech-Envelope Decoder")

# Include routers
app.include_router(runs.router)
app.include_router(inference.router)


@app.get("/health")
async def health_check():
    return {"status": "healthy", "environment": settings.ENVIRONMENT}
