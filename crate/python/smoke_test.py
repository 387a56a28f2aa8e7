"""Smoke test for the cadseq_py extension module."""

import json
import math
import tempfile

import cadseq_py as cs

CYLINDER = 'add_sketch("XY")\nadd_circle(0.0, 0.0, 0.5)\nadd_extrude(0, 1.0)\n'


def main():
    prog = cs.Program.parse(CYLINDER)
    assert len(prog) == 5
    assert prog.validate() == []
    assert prog.type_sequence() == [5, 0, 3, 4, 6]

    rows = prog.vectorize()
    assert len(rows) == 10 and rows[2] == [3, -1, 128, 128, -1, 128, -1]
    back = cs.Program.from_matrix(rows)
    assert cs.Program.from_json(back.to_json()) == back
    assert cs.Program.parse(back.to_text()) == back

    scene = prog.evaluate(48)
    exact = math.pi * 5.0 ** 2 * 10.0
    assert abs(scene.volume() - exact) / exact < 0.1, scene.volume()
    assert scene.iou(scene) == 1.0
    assert scene.to_stl().startswith("solid")
    assert scene.render_pgm(32, 24).startswith(b"P5\n32 24\n255\n")

    assert cs.quantize(0.0) == 128
    assert cs.dequantize(128) == 0.00390625
    assert cs.levenshtein([1, 2, 3], [1, 3]) == 1
    assert cs.baseline_ap1_no_sketch(0) == 1 / 256

    assert cs.Program.parse("add_line(0.5, 0.5)\n").validate() != []
    try:
        cs.Program.parse("add_line(0.5)\n")
    except ValueError:
        pass
    else:
        raise AssertionError("expected ValueError")

    with tempfile.TemporaryDirectory() as tmp:
        manifest = json.loads(
            cs.synthesize(tmp, mode="rules", seed=3, counts="TS1=4,*=1", resolution=24, width=32, height=32)
        )
        assert len(manifest["records"]) == sum(manifest["counts"].values())
        test_dir = f"{tmp}/train"
        rep = json.loads(cs.evaluate_dirs(test_dir, test_dir, resolution=24, width=32, height=32))
        assert all(row["acp"] == 1.0 for row in rep["prefix"])

    print("smoke test ok")


if __name__ == "__main__":
    main()
