import json
import math

from bbm_yaglom.manifest import RunManifest, Verdict, digest, write_csv


def test_csv_bytes(tmp_path):
    rec = write_csv(tmp_path, "demo", ["a", "b", "c"], [(0.1, True, None), (2, False, math.inf)])
    text = (tmp_path / "demo.csv").read_text()
    assert text == "# schema: bbm-yaglom/demo/1\na,b,c\n0.1,1,\n2,0,inf\n"
    assert rec.sha256 == digest(tmp_path / "demo.csv") and rec.bytes == len(text)


def test_manifest_round_trip(tmp_path):
    v = [Verdict("a", "exact", True, 0.0, "== 0"), Verdict("b", "trend", False, math.nan, "", "x")]
    m = RunManifest("demo", "0", {"seed": 1}, {"vals": [1.0, math.inf]}, v, run={"seconds": 1.5})
    assert not m.passed
    path = m.write(tmp_path)
    back = RunManifest.from_json(path.read_text())
    assert back.to_json() == m.to_json()
    assert back.verdicts[0].passed and math.isnan(back.verdicts[1].statistic)
    stable = json.loads(m.to_json(volatile=False))
    assert "run" not in stable and stable["summary"]["vals"] == [1.0, "inf"]
    assert stable["verdicts"][1]["status"] == "fail"
