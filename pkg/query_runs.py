from typing import Optional

from rich.console import Console
from rich.table import Table

from backend.harness.ledger import RunLedger


def list_runs(ledger: Optional[RunLedger] = None, console: Optional[Console] = None):
    ledger = ledger or RunLedger()
    console = console or Console()
    runs = ledger.list_runs()

    console.print(f"Found {len(runs)} experiment runs:")
    table = Table()
    for col in ("ID", "Kind", "Status", "Start Time", "Duration (s)", "Output", "Config"):
        table.add_column(col)

    for run in runs:
        duration = f"{run.execution_duration:.2f}" if run.execution_duration else "N/A"
        start_str = run.start_time.strftime("%Y-%m-%d %H:%M:%S")
        table.add_row(str(run.id), run.kind, run.status, start_str, duration, run.output_dir or "", run.config_path or "")
    console.print(table)
    return runs


if __name__ == "__main__":
    list_runs()
