import numpy as np


def central_difference(f, x, step=1e-6):
    """Gradient of the scalar function ``f`` at real or complex array ``x``.

    Complex entries get ``dRe + i dIm``, matching the package convention.
    """
    x = np.array(x, copy=True)
    grad = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        idx = it.multi_index
        for unit in ((1.0,) if x.dtype.kind != "c" else (1.0, 1j)):
            orig = x[idx]
            x[idx] = orig + unit * step
            fp = f(x)
            x[idx] = orig - unit * step
            fm = f(x)
            x[idx] = orig
            grad[idx] += unit * (fp - fm) / (2 * step)
    return grad


# acceptance criteria report: one (id, passed, detail) per criterion, printed at the end
ACCEPTANCE = []


def record(criterion, passed, detail=""):
    ACCEPTANCE.append((criterion, bool(passed), detail))
    return passed


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for criterion, passed, detail in ACCEPTANCE:
        status = "PASS" if passed else "FAIL"
        terminalreporter.write_line(f"[{status}] {criterion}: {detail}")
