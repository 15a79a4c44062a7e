from sqlalchemy import create_engine
from sqlalchemy.orm import declarative_base, sessionmaker

from eegdec.config import settings


def _engine_options(url: str) -> dict:
    if url.startswith("sqlite"):
        # SQLite sessions are shared between the API thread pool and eager tasks
        return {"connect_args": {"check_same_thread": False}}
    return {"pool_pre_ping": True, "pool_size": 10, "max_overflow": 20}


# Create database engine
engine = create_engine(settings.DATABASE_URL, **_engine_options(settings.DATABASE_URL))

# Create SessionLocal class
SessionLocal = sessionmaker(autocommit=False, autoflush=False, bind=engine)

# Create Base class for models
Base = declarative_base()


# Dependency to get database session
def get_db():
    db = SessionLocal()
    try:
        yield db
    finally:
        db.close()
