import numpy as np
import pytest

from cascadeiv import Dataset
from cascadeiv.errors import DataError

from conftest import bernoulli_iv_data


def test_valid_dataset_roundtrips_fields():
    d = bernoulli_iv_data(0, n=50, k=2)
    assert d.n_obs == 50
    assert d.n_treatments == 2
    assert d.n_clusters <= 40


def test_row_count_mismatch_rejected():
    d = bernoulli_iv_data(0, n=50, k=2)
    with pytest.raises(DataError, match="rows"):
        Dataset(y=d.y[:-1], a=d.a, z=d.z, x=d.x, cluster=d.cluster)


def test_nonbinary_treatments_rejected():
    d = bernoulli_iv_data(0, n=50, k=2)
    a = d.a.copy()
    a[0, 0] = 0.5
    with pytest.raises(DataError, match="0/1"):
        Dataset(y=d.y, a=a, z=d.z, x=d.x, cluster=d.cluster)
    # allowed when flagged continuous
    Dataset(y=d.y, a=a, z=d.z, x=d.x, cluster=d.cluster, binary_treatments=False)


def test_overidentified_rejected():
    d = bernoulli_iv_data(0, n=50, k=2)
    z = np.column_stack([d.z, d.z[:, 0]])
    with pytest.raises(DataError, match="just-identified"):
        Dataset(y=d.y, a=d.a, z=z, x=d.x, cluster=d.cluster)


def test_constant_column_required():
    d = bernoulli_iv_data(0, n=50, k=2)
    rng = np.random.default_rng(1)
    with pytest.raises(DataError, match="constant"):
        Dataset(y=d.y, a=d.a, z=d.z, x=rng.standard_normal((50, 2)), cluster=d.cluster)
    with pytest.raises(DataError, match="constant"):
        Dataset(y=d.y, a=d.a, z=d.z, x=np.ones((50, 2)), cluster=d.cluster)


def test_empty_cluster_id_rejected():
    d = bernoulli_iv_data(0, n=50, k=2)
    cluster = d.cluster.astype(object)
    cluster[3] = ""
    with pytest.raises(DataError, match="nonempty"):
        Dataset(y=d.y, a=d.a, z=d.z, x=d.x, cluster=cluster)
