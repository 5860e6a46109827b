from __future__ import annotations

import sys
from abc import ABC, abstractmethod
from typing import TextIO

from ColorStr import parse

from geometry import AdmissibilityReport


class ConsoleReport(ABC):
    """
    The abstract class for every human readable summary the CLI prints.
    A report has a title, an optional description and a colour code.
    """

    title: str
    description: str | None
    color: str
    stream: TextIO

    def __init__(self, title: str, description: str | None = None, color: str = "C",
                 stream: TextIO | None = None) -> None:
        self.title = title
        self.description = description
        self.color = color
        self.stream = stream or sys.stdout

    def write(self, line: str = "") -> None:
        self.stream.write(parse(line) + "\n")

    def header(self) -> None:
        """
        Prints the title and the indented description.
        """
        self.write(f"§4§{self.color}{self.title}§0")
        if self.description:
            for line in self.description.splitlines():
                self.write("  " + line)

    @staticmethod
    def verdict(passed: bool) -> str:
        return "§GPASS§0" if passed else "§RFAIL§0"

    @abstractmethod
    def body(self) -> None:
        """
        Prints the report content below the header.
        """
        pass

    def display(self) -> None:
        self.header()
        self.body()
        self.write()


class AdmissibilityView(ConsoleReport):
    """
    Lists each admissibility condition with its worst value, threshold and location.
    """

    report: AdmissibilityReport

    def __init__(self, report: AdmissibilityReport, stream: TextIO | None = None) -> None:
        super().__init__(f"Admissibility ({report.mode})", color="G" if report.verdict else "R", stream=stream)
        self.report = report

    def body(self) -> None:
        longest = max(len(c.name) for c in self.report.conditions)
        for c in self.report.conditions:
            padding = " " * (longest - len(c.name))
            self.write(f"  {c.name}{padding}  worst {c.worst:.6g} < {c.threshold:.6g} at "
                       f"({c.location[0]:.3f}, {c.location[1]:.3f})  {self.verdict(c.passed)}")
        self.write(f"  verdict: {self.verdict(self.report.verdict)}")


class TableView(ConsoleReport):
    """
    Prints rows under a header line, numbers in short scientific form.
    """

    columns: list[str]
    rows: list[list[object]]

    def __init__(self, title: str, columns: list[str], rows: list[list[object]], description: str | None = None,
                 stream: TextIO | None = None) -> None:
        super().__init__(title, description, stream=stream)
        self.columns = columns
        self.rows = rows

    @staticmethod
    def cell(value: object) -> str:
        if isinstance(value, float):
            return f"{value:.4e}"
        return str(value)

    def body(self) -> None:
        cells = [[self.cell(v) for v in row] for row in self.rows]
        widths = [max([len(name)] + [len(row[k]) for row in cells]) for k, name in enumerate(self.columns)]
        self.write("  " + "  ".join(f"§W{name:>{w}}§0" for name, w in zip(self.columns, widths)))
        for row in cells:
            self.write("  " + "  ".join(f"{v:>{w}}" for v, w in zip(row, widths)))
        if not cells:
            self.write("  (no rows)")


class ChecksView(ConsoleReport):
    """
    Prints verification checks, one per line, and the overall verdict.
    """

    checks: list

    def __init__(self, title: str, checks: list, stream: TextIO | None = None) -> None:
        super().__init__(title, color="G" if all(c.passed for c in checks) else "R", stream=stream)
        self.checks = checks

    def body(self) -> None:
        for check in self.checks:
            value = "n/a" if check.value is None else f"{check.value:.6g}"
            self.write(f"  {self.verdict(check.passed)} {check.name} = {value} (target {check.target})")
        self.write(f"  overall: {self.verdict(all(c.passed for c in self.checks))}")


class ArtifactsView(ConsoleReport):
    """
    Lists the files a subcommand wrote.
    """

    paths: list[str]

    def __init__(self, paths: list[str], stream: TextIO | None = None) -> None:
        super().__init__("Artifacts", stream=stream)
        self.paths = paths

    def body(self) -> None:
        for path in self.paths:
            self.write(f"  §C{path}§0")


def report_error(error_class: str, message: str, stream: TextIO | None = None) -> None:
    """
    Prints the machine readable failure line error[<class>]: <message> on stderr.
    """
    (stream or sys.stderr).write(f"error[{error_class}]: {message}\n")
