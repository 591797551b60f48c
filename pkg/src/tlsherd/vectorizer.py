"""Turn raw features into weighted vectors.

Numeric features are z-scored against the fit corpus (population statistics;
a zero-variance column maps to 0). Categorical features are one-hot columns
weighted by a smoothed inverse document frequency:

    idf(df) = ln((1 + N) / (1 + df)) + 1

where N is the corpus size. Term frequency within a flow is 0 or 1, so a
vector's categorical entry is either 0 or the idf weight itself. Every
categorical feature also reserves one out-of-vocabulary column; tokens never
seen at fit time land there with weight idf(0). That keeps transform total
over new corpora and makes "unknown cipher list" pairs agree with each other
while still disagreeing with every known value.

Column order is deterministic: features in registry order, tokens sorted
within a feature, the OOV column last per feature.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass

import numpy as np
from scipy import sparse

from .features import FeatureConfig, RawFeatures, extract_raw
from .model import TlsFlow


@dataclass(frozen=True)
class VectorRef:
    """What we still know about a vector once the flow itself is gone."""

    uid: str
    sample_id: str | None = None
    sni: str | None = None
    leaf_hash: str | None = None


@dataclass
class FeatureVector:
    numeric: np.ndarray
    cat_indices: np.ndarray
    cat_values: np.ndarray
    n_numeric_features: int
    n_categorical_features: int
    config_name: str
    ref: VectorRef | None = None


class VectorizerModel:
    """Fitted vocabulary, document frequencies, and numeric statistics."""

    def __init__(
        self,
        config: FeatureConfig,
        corpus_size: int,
        numeric_stats: dict[str, tuple[float, float]],
        doc_freq: dict[tuple[str, str], int],
    ):
        self.config = config
        self.corpus_size = corpus_size
        self.numeric_stats = numeric_stats
        self.doc_freq = doc_freq
        self._numeric_order = list(config.numeric_features())
        self._build_columns()

    def _build_columns(self) -> None:
        by_feature: dict[str, list[str]] = {}
        for feature, token in self.doc_freq:
            by_feature.setdefault(feature, []).append(token)
        self.vocab: dict[tuple[str, str], int] = {}
        self.oov_cols: dict[str, int] = {}
        col = 0
        for feature in self.config.categorical_features():
            for tok in sorted(by_feature.get(feature, ())):
                self.vocab[(feature, tok)] = col
                col += 1
            self.oov_cols[feature] = col
            col += 1
        self.n_cat_columns = col

    # -- weights ---------------------------------------------------------

    def idf(self, df: int) -> float:
        return math.log((1 + self.corpus_size) / (1 + df)) + 1.0

    def token_weight(self, feature: str, token: str) -> tuple[int, float]:
        """Column index and weight for one observed token."""
        key = (feature, token)
        if key in self.vocab:
            return self.vocab[key], self.idf(self.doc_freq[key])
        return self.oov_cols[feature], self.idf(0)

    # -- fitting ---------------------------------------------------------

    @classmethod
    def fit(cls, raws: list[RawFeatures], config: FeatureConfig) -> "VectorizerModel":
        if not raws:
            raise ValueError("cannot fit a vectorizer on an empty corpus")
        doc_freq: dict[tuple[str, str], int] = {}
        for raw in raws:
            for feature, token in raw.categorical.items():
                if token is None:
                    continue
                key = (feature, token)
                doc_freq[key] = doc_freq.get(key, 0) + 1

        numeric_stats: dict[str, tuple[float, float]] = {}
        names = list(config.numeric_features())
        if names:
            matrix = np.array(
                [[raw.numeric.get(name, 0.0) for name in names] for raw in raws],
                dtype=np.float64,
            )
            means = matrix.mean(axis=0)
            stds = matrix.std(axis=0)  # population std
            for i, name in enumerate(names):
                numeric_stats[name] = (float(means[i]), float(stds[i]))
        return cls(config, len(raws), numeric_stats, doc_freq)

    # -- transform -------------------------------------------------------

    def transform(self, raw: RawFeatures, ref: VectorRef | None = None) -> FeatureVector:
        numeric = np.zeros(len(self._numeric_order), dtype=np.float64)
        for i, name in enumerate(self._numeric_order):
            x = float(raw.numeric.get(name, 0.0))
            if self.config.zscore:
                mean, std = self.numeric_stats[name]
                numeric[i] = (x - mean) / std if std > 0.0 else 0.0
            else:
                numeric[i] = x

        cols: list[int] = []
        vals: list[float] = []
        for feature, token in raw.categorical.items():
            if token is None or feature not in self.oov_cols:
                continue
            col, weight = self.token_weight(feature, token)
            cols.append(col)
            vals.append(weight)
        order = np.argsort(cols, kind="stable")
        cat_indices = np.asarray(cols, dtype=np.int64)[order]
        cat_values = np.asarray(vals, dtype=np.float64)[order]
        return FeatureVector(
            numeric=numeric,
            cat_indices=cat_indices,
            cat_values=cat_values,
            n_numeric_features=self.config.n_numeric,
            n_categorical_features=self.config.n_categorical,
            config_name=self.config.name,
            ref=ref,
        )

    def transform_many(
        self, raws: list[RawFeatures], refs: list[VectorRef] | None = None
    ) -> "VectorSet":
        vectors = [
            self.transform(raw, refs[i] if refs else None)
            for i, raw in enumerate(raws)
        ]
        return VectorSet.stack(self.config, vectors, self.n_cat_columns)

    # -- persistence -----------------------------------------------------

    def to_payload(self) -> dict:
        return {
            "config": config_to_dict(self.config),
            "corpus_size": self.corpus_size,
            "numeric_stats": {
                name: [mean, std] for name, (mean, std) in sorted(self.numeric_stats.items())
            },
            "vocab": [
                [feature, token, self.doc_freq[(feature, token)]]
                for feature, token in sorted(self.doc_freq)
            ],
        }

    @classmethod
    def from_payload(cls, payload: dict) -> "VectorizerModel":
        config = config_from_dict(payload["config"])
        doc_freq = {
            (feature, token): int(df) for feature, token, df in payload["vocab"]
        }
        numeric_stats = {
            name: (float(pair[0]), float(pair[1]))
            for name, pair in payload["numeric_stats"].items()
        }
        return cls(config, int(payload["corpus_size"]), numeric_stats, doc_freq)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, VectorizerModel):
            return NotImplemented
        return self.to_payload() == other.to_payload()


def config_to_dict(config: FeatureConfig) -> dict:
    return {
        "name": config.name,
        "include_client": config.include_client,
        "include_server": config.include_server,
        "include_cert": config.include_cert,
        "include_payload": config.include_payload,
        "zscore": config.zscore,
    }


def config_from_dict(data: dict) -> FeatureConfig:
    return FeatureConfig(
        name=data["name"],
        include_client=data["include_client"],
        include_server=data["include_server"],
        include_cert=data["include_cert"],
        include_payload=data["include_payload"],
        zscore=data["zscore"],
    )


class VectorSet:
    """A stack of vectors sharing one vectorizer: dense numerics + CSR categoricals."""

    def __init__(
        self,
        config: FeatureConfig,
        numeric: np.ndarray,
        cat: sparse.csr_matrix,
        refs: list[VectorRef | None],
    ):
        self.config = config
        self.numeric = numeric
        self.cat = cat
        self.refs = refs

    def __len__(self) -> int:
        return self.numeric.shape[0]

    @classmethod
    def stack(
        cls,
        config: FeatureConfig,
        vectors: list[FeatureVector],
        n_cat_columns: int,
    ) -> "VectorSet":
        n = len(vectors)
        d_num = config.n_numeric
        numeric = np.zeros((n, d_num), dtype=np.float64)
        indptr = np.zeros(n + 1, dtype=np.int64)
        indices: list[np.ndarray] = []
        data: list[np.ndarray] = []
        for i, vec in enumerate(vectors):
            if d_num:
                numeric[i] = vec.numeric
            indices.append(vec.cat_indices)
            data.append(vec.cat_values)
            indptr[i + 1] = indptr[i] + len(vec.cat_indices)
        cat = sparse.csr_matrix(
            (
                np.concatenate(data) if data else np.zeros(0),
                np.concatenate(indices) if indices else np.zeros(0, dtype=np.int64),
                indptr,
            ),
            shape=(n, max(n_cat_columns, 1)),
        )
        return cls(config, numeric, cat, [v.ref for v in vectors])

    def vector(self, i: int) -> FeatureVector:
        row = self.cat.getrow(i)
        return FeatureVector(
            numeric=self.numeric[i].copy(),
            cat_indices=row.indices.astype(np.int64),
            cat_values=row.data.astype(np.float64),
            n_numeric_features=self.config.n_numeric,
            n_categorical_features=self.config.n_categorical,
            config_name=self.config.name,
            ref=self.refs[i],
        )

    def subset(self, idx: np.ndarray) -> "VectorSet":
        return VectorSet(
            self.config,
            self.numeric[idx],
            self.cat[idx],
            [self.refs[i] for i in idx],
        )


def leaf_hash_of(flow: TlsFlow) -> str | None:
    chain = flow.effective_server_chain
    if chain is None or not chain.certs_der:
        return None
    return hashlib.sha256(chain.certs_der[0]).hexdigest()


def ref_for(flow: TlsFlow) -> VectorRef:
    sni = None
    if flow.client is not None and flow.client.server_name:
        sni = flow.client.server_name.lower()
    return VectorRef(
        uid=flow.uid,
        sample_id=flow.sample_id,
        sni=sni,
        leaf_hash=leaf_hash_of(flow),
    )


def vectorize_flows(
    flows: list[TlsFlow], config: FeatureConfig
) -> tuple[VectorizerModel, VectorSet]:
    """Fit on the given flows and transform them in one go."""
    raws = [extract_raw(flow, config) for flow in flows]
    model = VectorizerModel.fit(raws, config)
    refs = [ref_for(flow) for flow in flows]
    return model, model.transform_many(raws, refs)
