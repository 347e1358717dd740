#!/usr/bin/env python3
"""
HrSegNet Complexity Tables
Prints the analytic params/GFLOPs of the HR-path, guidance and scalability variants
"""

import json
import os
import sys
from typing import Dict, List

import typer

# Add project root to path
sys.path.append(os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from app.complexity import model_complexity
from app.model.config import ModelConfig
from app.model.presets import hr_only, hrsegnet, sg_variant


class ComplexityTables:
    def __init__(self, input_size: int = 400):
        self.input_size = input_size

    def _row(self, label: str, config: ModelConfig) -> Dict[str, object]:
        report = model_complexity(config, self.input_size, self.input_size)
        return {
            "variant": label,
            "params_m": round(report.params_m, 4),
            "gflops": round(report.gflops, 4),
        }

    def hr_path_rows(self) -> List[Dict[str, object]]:
        """HR path alone at 1/2, 1/4 and 1/8 of the input."""
        return [self._row(f"hr-only {ratio}", hr_only(ratio)) for ratio in ("1/2", "1/4", "1/8")]

    def guidance_rows(self) -> List[Dict[str, object]]:
        rows = [self._row("hr-only 1/4", hr_only("1/4"))]
        rows.append(self._row("+ single-resolution guidance", sg_variant("single")))
        rows.append(self._row("+ multi-resolution guidance", sg_variant("multi")))
        rows.append(self._row("+ single guidance, mul fusion", sg_variant("single", "mul")))
        rows.append(self._row("+ double-step head", hrsegnet(32)))
        return rows

    def scalability_rows(self) -> List[Dict[str, object]]:
        return [self._row(f"HrSegNet-B{base}", hrsegnet(base)) for base in (16, 32, 48, 64)]

    def build(self) -> Dict[str, List[Dict[str, object]]]:
        return {
            "hr_path": self.hr_path_rows(),
            "guidance": self.guidance_rows(),
            "scalability": self.scalability_rows(),
        }


def print_tables(tables: Dict[str, List[Dict[str, object]]], input_size: int) -> None:
    print(f"HrSegNet complexity at {input_size}x{input_size}")
    for title, rows in tables.items():
        print()
        print(title.replace("_", " ").title())
        print("=" * 60)
        print(f"{'variant':<36} {'params (M)':>10} {'GFLOPs':>10}")
        for row in rows:
            print(f"{row['variant']:<36} {row['params_m']:>10.4f} {row['gflops']:>10.4f}")


def main(
    input_size: int = typer.Option(400, "--input-size", help="Square input side length"),
    as_json: bool = typer.Option(False, "--json", help="Emit JSON instead of tables"),
) -> None:
    tables = ComplexityTables(input_size).build()
    if as_json:
        print(json.dumps(tables, indent=2))
    else:
        print_tables(tables, input_size)


if __name__ == "__main__":
    typer.run(main)
