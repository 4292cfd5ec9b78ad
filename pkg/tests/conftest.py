import os
import sys

import pytest

sys.path.insert(0, os.path.dirname(__file__))

from vedgefl import _fallback  # noqa: E402

try:
    from vedgefl import _kernels  # noqa: E402
except ImportError:  # pragma: no cover - extension not built
    _kernels = None

BACKENDS = [pytest.param(_fallback, id="python")]
if _kernels is not None:
    BACKENDS.append(pytest.param(_kernels, id="cython"))


@pytest.fixture(params=BACKENDS, scope="module")
def backend(request):
    return request.param
