"""Throughput benchmarking that never alters numerical results.

The harness times calls to a stage callable across batch sizes, excludes
warm-up runs, reports the median over repetitions, and records machine info;
outputs of timed calls are the callable's outputs, untouched.
"""

from __future__ import annotations

import platform
import time
from dataclasses import dataclass, field


@dataclass
class BenchRow:
    batch: int
    ms_per_call: float
    items_per_sec: float
    repetitions: int
    low_confidence: bool = False


@dataclass
class BenchReport:
    stage: str
    rows: list[BenchRow] = field(default_factory=list)
    machine: dict = field(default_factory=dict)

    def as_dict(self) -> dict:
        return {
            "stage": self.stage,
            "machine": self.machine,
            "rows": [vars(r) for r in self.rows],
        }

    def table(self) -> str:
        header = f"{'batch':>6} {'ms/call':>12} {'items/sec':>12} {'reps':>5}"
        lines = [f"stage: {self.stage}", header, "-" * len(header)]
        for r in self.rows:
            flag = "  (low confidence)" if r.low_confidence else ""
            lines.append(
                f"{r.batch:>6} {r.ms_per_call:>12.3f} {r.items_per_sec:>12.1f} {r.repetitions:>5}{flag}"
            )
        return "\n".join(lines)


def machine_info(threads: int | None = None) -> dict:
    return {
        "platform": platform.platform(),
        "processor": platform.processor() or platform.machine(),
        "python": platform.python_version(),
        "threads": threads if threads is not None else 1,
    }


def throughput_bench(
    stage,
    batch_sizes,
    repetitions: int = 5,
    warmup: int = 2,
    stage_name: str = "stage",
    threads: int | None = None,
) -> BenchReport:
    """Median-of-repetitions timing of ``stage(batch_size)`` per batch size.

    ``stage`` must be a deterministic callable taking the batch size. With
    ``repetitions=1`` the single timing is flagged low-confidence.
    """
    report = BenchReport(stage=stage_name, machine=machine_info(threads))
    for batch in batch_sizes:
        for _ in range(warmup):
            stage(batch)
        samples = []
        for _ in range(max(1, repetitions)):
            start = time.perf_counter()
            stage(batch)
            samples.append(time.perf_counter() - start)
        med = float(sorted(samples)[len(samples) // 2])
        report.rows.append(
            BenchRow(
                batch=int(batch),
                ms_per_call=med * 1000.0,
                items_per_sec=batch / med if med > 0 else float("inf"),
                repetitions=len(samples),
                low_confidence=len(samples) < 2,
            )
        )
    return report
