"""
Database Models
SQLite run registry: runs, verification reports and metrics
"""
import sqlite3
import json
from datetime import datetime
from typing import Dict, List, Optional
from contextlib import contextmanager
import logging

from dampspde.config import config

logger = logging.getLogger(__name__)


class RunRegistry:
    """
    Registry of simulation runs

    Handles:
    - Run records (digest, output directory, version, wall clock)
    - Verification reports per run
    - Free-form metrics

    Failures are logged and never propagate into a run.
    """

    def __init__(self, db_path: Optional[str] = None):
        self.db_path = db_path or config.database.path
        self._initialize_database()

    def _initialize_database(self):
        """Initialize database tables"""
        try:
            with self._get_connection() as conn:
                cursor = conn.cursor()

                cursor.execute('''
                    CREATE TABLE IF NOT EXISTS runs (
                        id INTEGER PRIMARY KEY AUTOINCREMENT,
                        timestamp DATETIME NOT NULL,
                        digest TEXT NOT NULL,
                        out_dir TEXT NOT NULL,
                        seed INTEGER NOT NULL,
                        paths INTEGER NOT NULL,
                        version TEXT NOT NULL,
                        wall_clock REAL,
                        created_at DATETIME DEFAULT CURRENT_TIMESTAMP
                    )
                ''')

                cursor.execute('''
                    CREATE TABLE IF NOT EXISTS reports (
                        id INTEGER PRIMARY KEY AUTOINCREMENT,
                        timestamp DATETIME NOT NULL,
                        run_id INTEGER,
                        name TEXT NOT NULL,
                        passed INTEGER NOT NULL,
                        value REAL,
                        details TEXT,
                        created_at DATETIME DEFAULT CURRENT_TIMESTAMP
                    )
                ''')

                cursor.execute('''
                    CREATE TABLE IF NOT EXISTS metrics (
                        id INTEGER PRIMARY KEY AUTOINCREMENT,
                        timestamp DATETIME NOT NULL,
                        metric_name TEXT NOT NULL,
                        metric_value REAL NOT NULL,
                        metadata TEXT,
                        created_at DATETIME DEFAULT CURRENT_TIMESTAMP
                    )
                ''')

                conn.commit()
                logger.debug(f"Run registry ready at {self.db_path}")

        except Exception as e:
            logger.error(f"Registry initialization error: {e}")
            raise

    @contextmanager
    def _get_connection(self):
        """Context manager for database connections"""
        conn = sqlite3.connect(self.db_path)
        try:
            yield conn
        finally:
            conn.close()

    def log_run(self, digest: str, out_dir: str, seed: int, paths: int, version: str,
                wall_clock: Optional[float] = None) -> Optional[int]:
        """
        Record a finished run

        Returns:
            Row id, or None when the registry is unavailable
        """
        try:
            with self._get_connection() as conn:
                cursor = conn.cursor()
                cursor.execute('''
                    INSERT INTO runs (timestamp, digest, out_dir, seed, paths, version, wall_clock)
                    VALUES (?, ?, ?, ?, ?, ?, ?)
                ''', (datetime.now().isoformat(), digest, str(out_dir), seed, paths, version, wall_clock))
                conn.commit()
                return cursor.lastrowid

        except Exception as e:
            logger.error(f"Run logging error: {e}")
            return None

    def log_report(self, name: str, passed: bool, value: Optional[float] = None,
                   details: Optional[Dict] = None, run_id: Optional[int] = None):
        """
        Record one verification report

        Args:
            name: Report name (e.g. weak_residual)
            passed: Verdict
            value: Headline number
            details: JSON-serializable extras
            run_id: Run the report belongs to
        """
        try:
            with self._get_connection() as conn:
                cursor = conn.cursor()
                cursor.execute('''
                    INSERT INTO reports (timestamp, run_id, name, passed, value, details)
                    VALUES (?, ?, ?, ?, ?, ?)
                ''', (
                    datetime.now().isoformat(), run_id, name, int(bool(passed)),
                    None if value is None else float(value),
                    json.dumps(details, default=str) if details else None,
                ))
                conn.commit()

        except Exception as e:
            logger.error(f"Report logging error: {e}")

    def log_metric(self, metric_name: str, metric_value: float, metadata: Optional[Dict] = None):
        """Record a named metric"""
        try:
            with self._get_connection() as conn:
                cursor = conn.cursor()
                cursor.execute('''
                    INSERT INTO metrics (timestamp, metric_name, metric_value, metadata)
                    VALUES (?, ?, ?, ?)
                ''', (
                    datetime.now().isoformat(), metric_name, float(metric_value),
                    json.dumps(metadata, default=str) if metadata else None,
                ))
                conn.commit()

        except Exception as e:
            logger.error(f"Metric logging error: {e}")

    def get_recent_runs(self, limit: int = 20) -> List[Dict]:
        """
        Most recent runs first

        Args:
            limit: Maximum number of records to return
        """
        try:
            with self._get_connection() as conn:
                cursor = conn.cursor()
                cursor.execute('''
                    SELECT id, timestamp, digest, out_dir, seed, paths, version, wall_clock
                    FROM runs
                    ORDER BY id DESC
                    LIMIT ?
                ''', (limit,))
                return [
                    {
                        'id': row[0],
                        'timestamp': row[1],
                        'digest': row[2],
                        'out_dir': row[3],
                        'seed': row[4],
                        'paths': row[5],
                        'version': row[6],
                        'wall_clock': row[7],
                    }
                    for row in cursor.fetchall()
                ]

        except Exception as e:
            logger.error(f"Error fetching runs: {e}")
            return []

    def get_reports(self, run_id: int) -> List[Dict]:
        """Reports recorded for one run"""
        try:
            with self._get_connection() as conn:
                cursor = conn.cursor()
                cursor.execute('''
                    SELECT name, passed, value, details FROM reports WHERE run_id = ? ORDER BY id
                ''', (run_id,))
                return [
                    {
                        'name': row[0],
                        'passed': bool(row[1]),
                        'value': row[2],
                        'details': json.loads(row[3]) if row[3] else {},
                    }
                    for row in cursor.fetchall()
                ]

        except Exception as e:
            logger.error(f"Error fetching reports: {e}")
            return []

    def get_metrics(self, metric_name: Optional[str] = None, limit: int = 50) -> List[Dict]:
        """Most recent metrics first, optionally of one name"""
        try:
            with self._get_connection() as conn:
                cursor = conn.cursor()
                query = 'SELECT timestamp, metric_name, metric_value, metadata FROM metrics'
                params: tuple = ()
                if metric_name is not None:
                    query += ' WHERE metric_name = ?'
                    params = (metric_name,)
                cursor.execute(query + ' ORDER BY id DESC LIMIT ?', params + (limit,))
                return [
                    {
                        'timestamp': row[0],
                        'name': row[1],
                        'value': row[2],
                        'metadata': json.loads(row[3]) if row[3] else {},
                    }
                    for row in cursor.fetchall()
                ]

        except Exception as e:
            logger.error(f"Error fetching metrics: {e}")
            return []

    def get_statistics(self) -> Dict:
        """
        Registry totals

        Returns:
            Dictionary of statistics
        """
        try:
            with self._get_connection() as conn:
                cursor = conn.cursor()

                cursor.execute('SELECT COUNT(*) FROM runs')
                total_runs = cursor.fetchone()[0]

                cursor.execute('SELECT COUNT(*), SUM(passed) FROM reports')
                total_reports, passed = cursor.fetchone()

                cursor.execute('SELECT AVG(wall_clock) FROM runs')
                avg_wall = cursor.fetchone()[0] or 0

                cursor.execute('SELECT COUNT(*) FROM metrics')
                total_metrics = cursor.fetchone()[0]

                return {
                    'total_runs': total_runs,
                    'total_reports': total_reports,
                    'passed_reports': passed or 0,
                    'total_metrics': total_metrics,
                    'average_wall_clock': round(avg_wall, 3)
                }

        except Exception as e:
            logger.error(f"Error fetching statistics: {e}")
            return {}
