"""
CVE, CWE and CPE links from the bundled NVD fixture
===================================================

Snapshots the fixture into a cache, builds the graph (CVE, CWE, CPE, vendor
and component nodes), prints the CPE-delay and missing-CWE reports, trains a
small fused model and ranks candidate CPEs for CVE-2023-4863.

Set ``mode: live`` in ``nvd.yaml`` and export ``NVD_API_KEY`` to pull fresh
data instead; the steps are the same.
"""

import contextlib
import io
import json
import sys
import tempfile
from pathlib import Path

from vulnkg import cli

HERE = Path(__file__).resolve().parent
out = Path(sys.argv[1]) if len(sys.argv) > 1 else Path(tempfile.mkdtemp(prefix="vulnkg-nvd-"))
out.mkdir(parents=True, exist_ok=True)
config = out / "vulnkg.yaml"
config.write_text((HERE / "nvd.yaml").read_text())


def step(*args, quiet=False):
    print(f"\n$ vulnkg --config {config.name} {' '.join(args)}")
    argv = ["--config", str(config), "--offline", *args]
    if quiet:
        with contextlib.redirect_stdout(io.StringIO()):
            status = cli.main(argv)
    else:
        status = cli.main(argv)
    if status:
        sys.exit(status)


step("ingest")
step("build")

###############################################################################
# How often CPEs arrive late, per publication year, and how many CVEs lack a
# CWE. The full JSON goes to run/reports/stats.json.

step("stats", quiet=True)
stats = json.loads((out / "run" / "reports" / "stats.json").read_text())
print("year   CVEs   >1d    >7d   >30d  >180d")
for year, row in sorted(stats["cpe_delay"].items()):
    print(f"{year}  {row['total']:>5}  " + "  ".join(f"{row[w]:5.1f}" for w in ("1", "7", "30", "180")))
print(f"CVEs without a CWE: {100 * stats['missing_cwe_fraction']:.1f}%")

###############################################################################
# Transductive split over the two task relations (CVE to CWE, CPE to CVE),
# then training and evaluation against TransE.

step("split")
step("train")
step("eval")
step("eval", "--baseline", "transe")

###############################################################################
# matchingCVE points from CPE to CVE, so this query runs through its inverse
# and the candidates are CPEs.

step("predict", "--cve", "CVE-2023-4863", "--relation", "matchingCVE", "--top", "10")
step("predict", "--cve", "CVE-2023-4863", "--relation", "matchingCWE", "--top", "5", "--include-known")
