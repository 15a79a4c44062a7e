from celery import Celery
from eegdec.config import settings
import ssl
from urllib.parse import urlparse, parse_qs, urlencode

broker_url = settings.CELERY_BROKER_URL
backend_url = settings.CELERY_RESULT_BACKEND


def normalize_redis_url(url):
    """Drop the database path of redis URLs and add ssl_cert_reqs to rediss:// ones (hosted Redis)."""
    if not url or not url.startswith(("redis://", "rediss://")):
        return url

    parsed = urlparse(url)
    normalized = f"{parsed.scheme}://{parsed.netloc}"

    query_params = {k: v[0] if v else '' for k, v in parse_qs(parsed.query).items()}
    if parsed.scheme == "rediss" and "ssl_cert_reqs" not in query_params:
        query_params["ssl_cert_reqs"] = "none"
    if query_params:
        normalized += f"?{urlencode(query_params)}"
    if parsed.fragment:
        normalized += f"#{parsed.fragment}"
    return normalized


# Normalize URLs
broker_url = normalize_redis_url(broker_url)
backend_url = normalize_redis_url(backend_url)

ssl_options = {"ssl_cert_reqs": ssl.CERT_NONE, "ssl_ca_certs": None}
broker_transport_options = ssl_options if broker_url.startswith("rediss://") else {}
result_backend_transport_options = ssl_options if backend_url.startswith("rediss://") else {}

# Create Celery instance
celery_app = Celery(
    "eegdec",
    broker=broker_url,
    backend=backend_url,
    include=["eegdec.tasks.training_job"]
)

# Celery configuration
celery_app.conf.update(
    task_serializer="json",
    accept_content=["json"],
    result_serializer="json",
    timezone="UTC",
    enable_utc=True,
    task_track_started=True,
    task_always_eager=settings.CELERY_TASK_ALWAYS_EAGER,
    task_time_limit=24 * 60 * 60,  # full-dataset runs take hours
    task_soft_time_limit=23 * 60 * 60,
    worker_prefetch_multiplier=1,  # one training run per worker process at a time
    worker_max_tasks_per_child=10,
    broker_transport_options=broker_transport_options,
    result_backend_transport_options=result_backend_transport_options,
)
