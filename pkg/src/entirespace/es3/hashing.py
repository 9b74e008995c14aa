"""Feature pre-hashing: strings become uint64 ids at the start of the pipeline."""

from .. import _accel


def prehash_features(raw_features):
    """FNV-1a 64 of the UTF-8 bytes of ``"field=value"`` for each pair."""
    return [_accel.fnv1a64(f"{name}={value}".encode("utf-8")) for name, value in raw_features]


class Featurizer:
    """Per-entity hashed and dense features, cached by id."""

    def __init__(self, world):
        self.world = world
        self._user = {}
        self._query = {}
        self._item = {}

    def user_hashes(self, user_id):
        h = self._user.get(user_id)
        if h is None:
            raw = [("uid", user_id)] + [(f"u_attr{j}", int(a)) for j, a in enumerate(self.world.user_attrs[user_id])]
            h = self._user[user_id] = prehash_features(raw)
        return h

    def query_hashes(self, query_id):
        h = self._query.get(query_id)
        if h is None:
            raw = [("qid", query_id), ("q_cat", int(self.world.query_category[query_id]))]
            h = self._query[query_id] = prehash_features(raw)
        return h

    def item_features(self, item_id):
        f = self._item.get(item_id)
        if f is None:
            w = self.world
            raw = [("iid", item_id), ("i_cat", int(w.item_category[item_id])), ("i_price", int(w.item_price[item_id]))]
            f = self._item[item_id] = (prehash_features(raw), w.item_title[item_id].tolist())
        return f

    def context(self, query_id):
        return self.world.query_emb[query_id].tolist()
