import subprocess
import sys

import facemim


def test_a_backend_is_active():
    assert facemim.kernel_backend() in ("compiled", "python")


def test_env_var_forces_python_backend():
    out = subprocess.run(
        [sys.executable, "-c", "import facemim; print(facemim.kernel_backend())"],
        env={"FACEMIM_PURE_PYTHON": "1", "PATH": "/usr/bin:/bin"},
        capture_output=True,
        text=True,
        check=True,
    )
    assert out.stdout.strip() == "python"


def test_masking_pipeline_identical_on_both_backends():
    # the whole data path must not depend on which kernel is active
    code = (
        "import numpy as np\n"
        "from facemim.synth import make_face_labels\n"
        "from facemim.parsing import ParsingMap\n"
        "from facemim.regions import patchify_regions\n"
        "from facemim.masking import MaskConfig, sample_mask\n"
        "rng = np.random.Generator(np.random.Philox(3))\n"
        "t = patchify_regions(ParsingMap(labels=make_face_labels(64, 8, rng)), 8)\n"
        "p = sample_mask(t, MaskConfig('crfr_p', 0.75, 5))\n"
        "print(''.join(str(int(b)) for b in p.mask), p.region)\n"
    )
    runs = {}
    for backend, env in (("compiled", {}), ("python", {"FACEMIM_PURE_PYTHON": "1"})):
        out = subprocess.run(
            [sys.executable, "-c", code],
            env={"PATH": "/usr/bin:/bin", **env},
            capture_output=True,
            text=True,
            check=True,
        )
        runs[backend] = out.stdout
    assert runs["compiled"] == runs["python"]
