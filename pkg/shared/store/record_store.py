"""
Shared Embedded Record Store for the Patch Engine Monorepo

An ordered key-value store over a single SQLite file, accessed through
SQLAlchemy Core. Every table maps a binary key to a binary value and is
clustered on the key (``WITHOUT ROWID``), so range scans come back in
lexicographic key order. Callers encode integers big-endian to make that
order numeric.
"""

import hashlib
import os
import threading
from pathlib import Path
from typing import Dict, Iterable, Iterator, List, Optional, Tuple

import structlog
from sqlalchemy import Column, LargeBinary, MetaData, Table, create_engine, event, func, inspect, select
from sqlalchemy.exc import SQLAlchemyError

logger = structlog.get_logger(__name__)

Record = Tuple[bytes, bytes]


class RecordStoreError(OSError):
    """Raised when the underlying store cannot be read or written."""


def prefix_successor(prefix: bytes) -> Optional[bytes]:
    """Smallest key greater than every key starting with ``prefix``."""
    stripped = prefix.rstrip(b"\xff")
    if not stripped:
        return None
    return stripped[:-1] + bytes([stripped[-1] + 1])


class RecordStore:
    """Embedded ordered record store for the patch engine."""

    # Reserved key for per-table sidecar metadata (sorts after every 8-byte key)
    SIDECAR_KEY = b"\xff" * 8

    # Rows per INSERT batch
    WRITE_BATCH = 256

    def __init__(self, path: str, create: bool = True):
        """
        Open (or create) a record store.

        Args:
            path: Location of the store file
            create: Create the file if it does not exist (default: True)
        """
        self.path = str(path)
        if not create and not os.path.exists(self.path):
            raise RecordStoreError(f"Record store not found: {self.path}")

        Path(self.path).parent.mkdir(parents=True, exist_ok=True)
        self._metadata = MetaData()
        self._tables: Dict[str, Table] = {}
        self._lock = threading.Lock()

        try:
            self.engine = create_engine(
                f"sqlite:///{self.path}",
                connect_args={"check_same_thread": False},
            )
            event.listen(self.engine, "connect", _configure_connection)
            with self.engine.connect() as conn:
                existing = inspect(conn).get_table_names()
            for name in existing:
                self._register(name)
            logger.debug("Opened record store", path=self.path, tables=len(existing))
        except SQLAlchemyError as e:
            logger.error("Failed to open record store", path=self.path, error=str(e))
            raise RecordStoreError(f"Failed to open record store {self.path}: {e}") from e

    def __enter__(self):
        return self

    def __exit__(self, exc_type, exc_val, exc_tb):
        self.close()

    def _register(self, name: str) -> Table:
        table = Table(
            name,
            self._metadata,
            Column("key", LargeBinary, primary_key=True),
            Column("value", LargeBinary, nullable=False),
            sqlite_with_rowid=False,
        )
        self._tables[name] = table
        return table

    def table(self, name: str) -> Table:
        """Get a table, creating it on first use."""
        with self._lock:
            table = self._tables.get(name)
            if table is None:
                table = self._register(name)
                try:
                    table.create(self.engine, checkfirst=True)
                except SQLAlchemyError as e:
                    logger.error("Failed to create table", path=self.path, table=name, error=str(e))
                    raise RecordStoreError(f"Failed to create table {name}: {e}") from e
            return table

    def has_table(self, name: str) -> bool:
        return name in self._tables

    def table_names(self) -> List[str]:
        return sorted(self._tables)

    def put(self, table: str, key: bytes, value: bytes) -> None:
        """Insert or replace one record."""
        self.put_many(table, [(key, value)])

    def put_many(self, table: str, records: Iterable[Record]) -> int:
        """
        Insert or replace records in one transaction.

        Args:
            table: Table name
            records: (key, value) pairs, consumed lazily

        Returns:
            Number of records written
        """
        target = self.table(table)
        stmt = target.insert().prefix_with("OR REPLACE")
        written = 0
        try:
            with self.engine.begin() as conn:
                batch: List[Dict[str, bytes]] = []
                for key, value in records:
                    batch.append({"key": key, "value": value})
                    if len(batch) >= self.WRITE_BATCH:
                        conn.execute(stmt, batch)
                        written += len(batch)
                        batch = []
                if batch:
                    conn.execute(stmt, batch)
                    written += len(batch)
        except SQLAlchemyError as e:
            logger.error("Error writing records", path=self.path, table=table, error=str(e))
            raise RecordStoreError(f"Error writing to {table}: {e}") from e
        return written

    def get(self, table: str, key: bytes) -> Optional[bytes]:
        """
        Get one record.

        Returns:
            The stored value or None if the key is absent
        """
        if table not in self._tables:
            return None
        target = self._tables[table]
        try:
            with self.engine.connect() as conn:
                row = conn.execute(select(target.c.value).where(target.c.key == key)).first()
        except SQLAlchemyError as e:
            logger.error("Error reading record", path=self.path, table=table, error=str(e))
            raise RecordStoreError(f"Error reading from {table}: {e}") from e
        return None if row is None else bytes(row[0])

    def get_many(self, table: str, keys: List[bytes]) -> Dict[bytes, bytes]:
        """Get several records; absent keys are left out of the result."""
        if table not in self._tables or not keys:
            return {}
        target = self._tables[table]
        found: Dict[bytes, bytes] = {}
        try:
            with self.engine.connect() as conn:
                for start in range(0, len(keys), 500):
                    chunk = keys[start:start + 500]
                    rows = conn.execute(
                        select(target.c.key, target.c.value).where(target.c.key.in_(chunk))
                    )
                    for key, value in rows:
                        found[bytes(key)] = bytes(value)
        except SQLAlchemyError as e:
            logger.error("Error reading records", path=self.path, table=table, error=str(e))
            raise RecordStoreError(f"Error reading from {table}: {e}") from e
        return found

    def scan(
        self,
        table: str,
        lo: Optional[bytes] = None,
        hi: Optional[bytes] = None,
    ) -> Iterator[Record]:
        """
        Yield records with lo <= key < hi in ascending key order.

        Either bound may be None for an open end. The connection stays open
        while the caller iterates.
        """
        if table not in self._tables:
            return
        target = self._tables[table]
        stmt = select(target.c.key, target.c.value).order_by(target.c.key)
        if lo is not None:
            stmt = stmt.where(target.c.key >= lo)
        if hi is not None:
            stmt = stmt.where(target.c.key < hi)
        try:
            with self.engine.connect() as conn:
                for key, value in conn.execute(stmt):
                    yield bytes(key), bytes(value)
        except SQLAlchemyError as e:
            logger.error("Error scanning records", path=self.path, table=table, error=str(e))
            raise RecordStoreError(f"Error scanning {table}: {e}") from e

    def scan_prefix(self, table: str, prefix: bytes) -> Iterator[Record]:
        """Yield every record whose key starts with ``prefix``."""
        return self.scan(table, prefix, prefix_successor(prefix))

    def count(self, table: str) -> int:
        if table not in self._tables:
            return 0
        target = self._tables[table]
        try:
            with self.engine.connect() as conn:
                return int(conn.execute(select(func.count()).select_from(target)).scalar_one())
        except SQLAlchemyError as e:
            logger.error("Error counting records", path=self.path, table=table, error=str(e))
            raise RecordStoreError(f"Error counting {table}: {e}") from e

    def delete(self, table: str, key: bytes) -> bool:
        """
        Delete a record.

        Returns:
            True if a record was removed
        """
        if table not in self._tables:
            return False
        target = self._tables[table]
        try:
            with self.engine.begin() as conn:
                result = conn.execute(target.delete().where(target.c.key == key))
            return result.rowcount > 0
        except SQLAlchemyError as e:
            logger.error("Error deleting record", path=self.path, table=table, error=str(e))
            raise RecordStoreError(f"Error deleting from {table}: {e}") from e

    def clear(self, table: str) -> int:
        """Remove every record of a table; returns the number removed."""
        if table not in self._tables:
            return 0
        target = self._tables[table]
        try:
            with self.engine.begin() as conn:
                result = conn.execute(target.delete())
            deleted = result.rowcount
            logger.debug("Cleared table", path=self.path, table=table, deleted=deleted)
            return deleted
        except SQLAlchemyError as e:
            logger.error("Error clearing table", path=self.path, table=table, error=str(e))
            raise RecordStoreError(f"Error clearing {table}: {e}") from e

    def vacuum(self) -> None:
        """Reclaim free pages so the file size reflects live data."""
        try:
            with self.engine.connect() as conn:
                conn.exec_driver_sql("VACUUM")
        except SQLAlchemyError as e:
            logger.error("Error compacting store", path=self.path, error=str(e))
            raise RecordStoreError(f"Error compacting {self.path}: {e}") from e

    def size_bytes(self) -> int:
        """Total persisted bytes, including keys, pages and journal files."""
        total = 0
        for suffix in ("", "-journal", "-wal"):
            candidate = self.path + suffix
            if os.path.exists(candidate):
                total += os.path.getsize(candidate)
        return total

    def checksum(self) -> str:
        """SHA-256 over every table's records in name and key order."""
        digest = hashlib.sha256()
        for name in self.table_names():
            digest.update(name.encode("utf-8"))
            for key, value in self.scan(name):
                digest.update(len(key).to_bytes(4, "big"))
                digest.update(key)
                digest.update(len(value).to_bytes(8, "big"))
                digest.update(value)
        return digest.hexdigest()

    def get_store_info(self) -> Dict[str, object]:
        """
        Get store information and statistics.

        Returns:
            Dictionary with path, size and per-table record counts
        """
        return {
            "path": self.path,
            "size_bytes": self.size_bytes(),
            "tables": {name: self.count(name) for name in self.table_names()},
        }

    def close(self) -> None:
        self.engine.dispose()


def _configure_connection(dbapi_connection, connection_record) -> None:
    cursor = dbapi_connection.cursor()
    cursor.execute("PRAGMA journal_mode=DELETE")
    cursor.execute("PRAGMA synchronous=NORMAL")
    cursor.close()


# Open stores, one per path
_store_instances: Dict[str, RecordStore] = {}
_store_lock = threading.Lock()


def get_store(path: str, create: bool = True) -> RecordStore:
    """
    Get or open the shared store instance for a path.

    Returns:
        RecordStore instance bound to ``path``
    """
    key = os.path.abspath(str(path))
    with _store_lock:
        store = _store_instances.get(key)
        if store is None:
            store = RecordStore(key, create=create)
            _store_instances[key] = store
        return store


def release_store(path: str) -> None:
    """Close and forget the shared instance for a path, if any."""
    key = os.path.abspath(str(path))
    with _store_lock:
        store = _store_instances.pop(key, None)
    if store is not None:
        store.close()
