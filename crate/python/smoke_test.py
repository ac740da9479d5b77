# SPDX-License-Identifier: Apache-2.0
"""Smoke test for the Python bindings.

Build and install the extension first:

    pip install --no-build-isolation -e crates/python
"""

import json
import pathlib
import sys

import jsonschema
import sgx_symex

CORPUS = pathlib.Path(__file__).resolve().parent.parent / "corpus"


def main():
    pkg = sgx_symex.load_package(CORPUS / "gmp_add")
    assert pkg.name == "gmp_add"
    assert pkg.ecalls == [(0, "e_mpz_add")]
    assert pkg.enclave == (0x100000, 0x40000)

    report = pkg.analyze(seed=0)
    findings = report.findings()
    assert len(report) == len(findings) == 1
    f = findings[0]
    assert (f.kind, f.severity, f.confidence) == ("controlled-write", "high", "exact")
    assert f.pc == pkg.symbol("mpz_set_store")
    assert f.provenance[0] == "ecall-arg"
    assert f.reaches_enclave and f.value_controlled

    schema = json.loads(sgx_symex.REPORT_SCHEMA)
    jsonschema.validate(report.to_dict(), schema)
    sgx_symex.validate_report(report.to_json())

    assert pkg.replay(report, f.id) == ("confirmed", None)

    # Perturb the last host read the witness serves; replay must diverge.
    doc = report.to_dict()
    read = doc["ecalls"][0]["findings"][0]["witness"]["host_reads"][-1]
    read["bytes"] = "%02x" % (int(read["bytes"][:2], 16) ^ 0xFF) + read["bytes"][2:]
    outcome, step = pkg.replay(sgx_symex.Report.from_json(json.dumps(doc)), f.id)
    assert outcome == "diverged" and step is not None

    assert "mpz_set_store" in report.explain(f.id)
    assert len(sgx_symex.analyze(CORPUS / "signal_like")) == 0

    verdicts = sgx_symex.verify()
    failed = [v["name"] for v in verdicts if not v["ok"]]
    assert not failed, failed
    broken = sgx_symex.verify(disable=["controlled-write"])
    assert any(not v["ok"] for v in broken)

    try:
        sgx_symex.load_package(CORPUS / "missing")
    except sgx_symex.AnalysisError:
        pass
    else:
        raise AssertionError("missing package loaded")

    print(f"ok: sgx_symex {sgx_symex.__version__}, {len(verdicts)} corpus packages verified")
    return 0


if __name__ == "__main__":
    sys.exit(main())
