from contextlib import contextmanager

from sqlalchemy import create_engine
from sqlalchemy.orm import declarative_base, sessionmaker

from .config import database_url

Base = declarative_base()

_sessions = {}


def get_session_factory(url: str | None = None):
    """Session factory for the run ledger, or None when the ledger is disabled."""
    url = url if url is not None else database_url()
    if not url:
        return None
    if url not in _sessions:
        from . import models  # noqa: F401  registers the tables on Base

        engine = create_engine(
            url, connect_args={"check_same_thread": False} if url.startswith("sqlite") else {}
        )
        # Function to create all tables
        Base.metadata.create_all(bind=engine)
        _sessions[url] = sessionmaker(autocommit=False, autoflush=False, bind=engine)
    return _sessions[url]


@contextmanager
def get_db(url: str | None = None):
    """Yield a ledger session (None when disabled) and always close it."""
    factory = get_session_factory(url)
    if factory is None:
        yield None
        return
    db = factory()
    try:
        yield db
    finally:
        db.close()
