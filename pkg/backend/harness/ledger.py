"""Experiment run ledger backed by SQLAlchemy."""

import logging
import os
from datetime import datetime, timezone
from typing import List, Optional

from sqlalchemy import DateTime, Float, Integer, String, Text, create_engine, select
from sqlalchemy.orm import DeclarativeBase, Mapped, Session, mapped_column

logger = logging.getLogger("MOSAttack")

DEFAULT_DB_URL = "sqlite:///mosattack_runs.db"


class Base(DeclarativeBase):
    pass


class ExperimentRun(Base):
    __tablename__ = "experiment_run"

    id: Mapped[int] = mapped_column(Integer, primary_key=True)
    kind: Mapped[str] = mapped_column(String(20), nullable=False)
    config_path: Mapped[Optional[str]] = mapped_column(Text, nullable=True)
    status: Mapped[str] = mapped_column(String(20), nullable=False, default="Pending")
    start_time: Mapped[datetime] = mapped_column(
        DateTime, default=lambda: datetime.now(timezone.utc), index=True
    )
    end_time: Mapped[Optional[datetime]] = mapped_column(DateTime, nullable=True)
    execution_duration: Mapped[Optional[float]] = mapped_column(Float, nullable=True)  # in seconds
    output_dir: Mapped[Optional[str]] = mapped_column(Text, nullable=True)
    message: Mapped[Optional[str]] = mapped_column(Text, nullable=True)

    def __repr__(self):
        return f"<ExperimentRun {self.id} {self.kind} {self.status}>"


def get_db_url() -> str:
    return os.environ.get("MOSATTACK_DB_URL", DEFAULT_DB_URL)


class RunLedger:
    """Records CLI runs: one row per train/attack/mine invocation."""

    def __init__(self, url: Optional[str] = None) -> None:
        self.engine = create_engine(url or get_db_url())
        Base.metadata.create_all(self.engine)

    def start(self, kind: str, config_path: Optional[str] = None, output_dir: Optional[str] = None) -> int:
        with Session(self.engine) as session:
            run = ExperimentRun(kind=kind, config_path=config_path, output_dir=output_dir, status="Running")
            session.add(run)
            session.commit()
            logger.info(f"[MOSAttack] Recorded {kind} run {run.id}")
            return run.id

    def finish(self, run_id: int, status: str, message: Optional[str] = None) -> None:
        with Session(self.engine) as session:
            run = session.get(ExperimentRun, run_id)
            if run is None:
                logger.warning(f"[MOSAttack] Run {run_id} not found in ledger")
                return
            run.status = status
            run.message = message
            run.end_time = datetime.now(timezone.utc)
            start = run.start_time
            if start.tzinfo is None:
                # sqlite drops the timezone
                start = start.replace(tzinfo=timezone.utc)
            run.execution_duration = (run.end_time - start).total_seconds()
            session.commit()

    def list_runs(self) -> List[ExperimentRun]:
        with Session(self.engine, expire_on_commit=False) as session:
            stmt = select(ExperimentRun).order_by(ExperimentRun.start_time.desc(), ExperimentRun.id.desc())
            return list(session.execute(stmt).scalars().all())
