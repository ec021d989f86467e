from datetime import datetime
from typing import Dict, Iterable, List

from sqlalchemy import JSON, Column, DateTime, Float, ForeignKey, Integer, String, create_engine
from sqlalchemy.orm import declarative_base, relationship, sessionmaker

Base = declarative_base()


def get_engine(database_url: str):
    """Engine for the run registry; SQLite connections may be shared across threads."""
    connect_args = {"check_same_thread": False} if database_url.startswith("sqlite") else {}
    return create_engine(database_url, connect_args=connect_args)


def get_sessionmaker(database_url: str):
    engine = get_engine(database_url)
    Base.metadata.create_all(bind=engine)
    return sessionmaker(autocommit=False, autoflush=False, bind=engine)


class ExperimentRun(Base):
    """One experiment grid row, keyed by its configuration hash"""
    __tablename__ = "experiment_runs"

    id = Column(Integer, primary_key=True, index=True)
    config_hash = Column(String, unique=True, index=True, nullable=False)
    benchmark = Column(String, nullable=False)
    config = Column(JSON, default=dict)
    seed = Column(Integer, nullable=False)
    version = Column(String, nullable=False)

    # Results
    test_mape = Column(Float, nullable=True)
    stable_ia = Column(Float, nullable=True)
    region_count = Column(Integer, nullable=True)
    solve_status = Column(String, nullable=True)  # optimal, time_limit, infeasible
    solve_objective = Column(Float, nullable=True)

    created_at = Column(DateTime, default=datetime.utcnow)
    updated_at = Column(DateTime, default=datetime.utcnow, onupdate=datetime.utcnow)

    stages = relationship("StageRecord", back_populates="run", cascade="all, delete-orphan")

    def __repr__(self):
        return f"<ExperimentRun(config_hash={self.config_hash}, benchmark={self.benchmark})>"


class StageRecord(Base):
    """Outcome of one pipeline stage for a run"""
    __tablename__ = "stage_records"

    id = Column(Integer, primary_key=True, index=True)
    run_id = Column(Integer, ForeignKey("experiment_runs.id"), nullable=False)
    stage = Column(String, nullable=False)  # train, scale, bounds, obbt, regions, solve
    status = Column(String, default="ok")  # ok, cached, failed
    error = Column(String, nullable=True)

    run = relationship("ExperimentRun", back_populates="stages")

    def __repr__(self):
        return f"<StageRecord(stage={self.stage}, status={self.status})>"


def _nullable(value):
    if value is None or (isinstance(value, float) and value != value):
        return None
    return value


def record_rows(database_url: str, rows: Iterable[Dict], version: str) -> int:
    """
    Upsert experiment rows and their stage outcomes into the registry.

    Args:
        database_url: SQLAlchemy URL
        rows: Report rows as produced by the experiment runner
        version: Package version recorded with each run

    Returns:
        Number of runs written
    """
    Session = get_sessionmaker(database_url)
    count = 0
    with Session() as db:
        for row in rows:
            run = db.query(ExperimentRun).filter_by(config_hash=row["config_hash"]).one_or_none()
            if run is None:
                run = ExperimentRun(config_hash=row["config_hash"])
                db.add(run)
            run.benchmark = row["benchmark"]
            run.config = row.get("config", {})
            run.seed = int(row["seed"])
            run.version = version
            run.test_mape = _nullable(row.get("test_mape"))
            run.stable_ia = _nullable(row.get("stable_ia"))
            region_count = _nullable(row.get("region_count"))
            run.region_count = None if region_count is None else int(region_count)
            run.solve_status = _nullable(row.get("solve_status_ia"))
            run.solve_objective = _nullable(row.get("solve_objective_ia"))
            run.stages = [
                StageRecord(stage=stage, status=status, error=row.get("errors", {}).get(stage))
                for stage, status in row.get("stages", {}).items()
            ]
            count += 1
        db.commit()
    return count


def list_runs(database_url: str) -> List[ExperimentRun]:
    Session = get_sessionmaker(database_url)
    with Session() as db:
        runs = db.query(ExperimentRun).order_by(ExperimentRun.config_hash).all()
        db.expunge_all()
    return runs
