"""Smoke test for the designspace_py extension.

Usage: python smoke_test.py [path/to/libdesignspace_py.so]

Without an argument the script looks for the library in the workspace
target directory (release first, then debug), copies it next to a temporary
`designspace_py.so` and imports it from there.
"""

import importlib.util
import math
import pathlib
import shutil
import sys
import tempfile

ROOT = pathlib.Path(__file__).resolve().parents[3]


def find_library():
    if len(sys.argv) > 1:
        return pathlib.Path(sys.argv[1])
    for profile in ("release", "debug"):
        for name in ("libdesignspace_py.so", "libdesignspace_py.dylib"):
            p = ROOT / "target" / profile / name
            if p.exists():
                return p
    sys.exit("build first: cargo build --release -p designspace-py --features extension-module")


def load(lib):
    tmp = pathlib.Path(tempfile.mkdtemp())
    target = tmp / "designspace_py.so"
    shutil.copy(lib, target)
    spec = importlib.util.spec_from_file_location("designspace_py", target)
    module = importlib.util.module_from_spec(spec)
    spec.loader.exec_module(module)
    return module


def main():
    ds = load(find_library())

    assert ds.gen_block_widths(4, 48, 48, 2.0) == [48, 96, 192, 192]
    w0, wa, wm, e_fit = ds.fit_linear(ds.gen_block_widths(8, 40, 24, 2.0))
    assert e_fit == 0.0, e_fit

    assert abs(ds.design_space_size("anynetx-e") / 5.5e11 - 1) < 0.02

    spec = ds.Spec.from_json(
        '{"block_type":"X","stem_width":32,"resolution":224,"num_classes":1000,'
        '"stages":[{"d":1,"w":24,"b":1.0,"g":8},{"d":1,"w":24,"b":1.0,"g":8},'
        '{"d":1,"w":24,"b":1.0,"g":8},{"d":1,"w":24,"b":1.0,"g":8}]}'
    )
    assert spec.spec_hash == "9d2cfc99979f3286", spec.spec_hash
    assert ds.Spec.from_json(spec.to_json()) == spec
    flops, params, acts = spec.metrics()
    assert flops > 0 and params > 0 and acts > 0

    pop = ds.sample_population("regnetx", 20, 360e6, 400e6, seed=3)
    assert len(pop) == 20
    assert all(360e6 <= s.metrics()[0] <= 400e6 for s in pop)
    errors = [ds.surrogate_error(s, seed=1) for s in pop]
    assert all(0.05 <= e <= 0.95 for e in errors)

    assert ds.edf([0.1, 0.2, 0.3], [0.1, 0.25, 0.31]) == [0.0, 2 / 3, 1.0]
    lo, med, hi = ds.bootstrap_best([(7.0, e) for e in errors], seed=1)
    assert lo == med == hi == 7.0

    curve = ds.random_search_efficiency(errors, [1, 5, 20], trials=200)
    means = [m for _, m, _ in curve]
    assert means == sorted(means, reverse=True)
    assert math.isclose(means[-1], min(errors))

    try:
        ds.gen_block_widths(4, 48, 48, 1.0)
    except ValueError:
        pass
    else:
        raise AssertionError("wm = 1 accepted")

    print("designspace_py smoke test passed")


if __name__ == "__main__":
    main()
