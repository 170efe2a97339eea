import pytest

from ionflux.model_core import BoundaryData, ConstantGeometry, IonPair, ModelSpec, PermanentCharge


@pytest.fixture
def ions11():
    return IonPair(z1=1.0, z2=-1.0, d=0.0, lam=1.0)


@pytest.fixture
def ions12():
    return IonPair(z1=1.0, z2=-2.0, d=0.0, lam=0.7)


def build_model(V=0.0, l=(1.0, 1.0), r=(1.0, 1.0), Q=0.0, z=(1.0, -1.0), d=0.0, lam=1.0, eps=1e-3,
                geometry=None):
    return ModelSpec(ions=IonPair(z1=z[0], z2=z[1], d=d, lam=lam),
                     boundary=BoundaryData(V=V, l1=l[0], l2=l[1], r1=r[0], r2=r[1]),
                     geometry=geometry or ConstantGeometry(a=1.0 / 3.0, b=2.0 / 3.0),
                     charge=PermanentCharge(Q2=Q), epsilon=eps)


@pytest.fixture
def make_model():
    return build_model


@pytest.fixture
def write_config(tmp_path):
    def write(name, lines):
        path = tmp_path / name
        path.write_text("\n".join(lines) + "\n")
        return path
    return write
