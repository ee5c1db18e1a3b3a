"""Rooted category trees and Wu-Palmer similarity."""
from __future__ import annotations

from pathlib import Path


class Taxonomy:
    """Single-rooted tree stored as child -> parent links. Root depth is 1."""

    def __init__(self, parent: dict[str, str | None], root: str = "entity"):
        if root not in parent:
            parent = {root: None, **parent}
        if parent[root] is not None:
            raise ValueError("root must not have a parent")
        self.parent = dict(parent)
        self.root = root
        self._depth: dict[str, int] = {}
        for node in self.parent:
            self._depth[node] = self._compute_depth(node)
        self.children: dict[str, list[str]] = {n: [] for n in self.parent}
        for node, par in self.parent.items():
            if par is not None:
                if par not in self.parent:
                    raise ValueError(f"parent {par!r} of {node!r} is not a node")
                self.children[par].append(node)

    def _compute_depth(self, node: str) -> int:
        seen = set()
        d = 1
        cur = node
        while self.parent[cur] is not None:
            if cur in seen:
                raise ValueError(f"cycle through {node!r}")
            seen.add(cur)
            cur = self.parent[cur]
            if cur not in self.parent:
                raise ValueError(f"dangling parent {cur!r}")
            d += 1
        if cur != self.root:
            raise ValueError(f"{node!r} is not reachable from root {self.root!r}")
        return d

    def __contains__(self, node: str) -> bool:
        return node in self.parent

    def nodes(self) -> list[str]:
        return list(self.parent)

    def leaves(self) -> list[str]:
        return [n for n, ch in self.children.items() if not ch]

    def depth(self, node: str) -> int:
        try:
            return self._depth[node]
        except KeyError:
            raise KeyError(f"unknown taxonomy node {node!r}") from None

    def path_to_root(self, node: str) -> list[str]:
        self.depth(node)
        out = [node]
        while self.parent[out[-1]] is not None:
            out.append(self.parent[out[-1]])
        return out

    def lca(self, a: str, b: str) -> str:
        anc = set(self.path_to_root(a))
        for n in self.path_to_root(b):
            if n in anc:
                return n
        return self.root

    def wup(self, a: str, b: str) -> float:
        """Wu-Palmer similarity ``2 * depth(lca) / (depth(a) + depth(b))``."""
        da, db = self.depth(a), self.depth(b)
        return 2.0 * self.depth(self.lca(a, b)) / (da + db)

    def to_tsv(self) -> str:
        lines = [f"{c}\t{p}" for c, p in self.parent.items() if p is not None]
        return "\n".join(lines) + "\n"

    def save(self, path) -> None:
        Path(path).write_text(self.to_tsv(), encoding="utf-8")

    @classmethod
    def from_tsv(cls, text: str, root: str = "entity") -> "Taxonomy":
        parent: dict[str, str | None] = {root: None}
        for line in text.splitlines():
            if not line.strip():
                continue
            child, par = line.split("\t")
            parent[child.strip()] = par.strip()
        return cls(parent, root=root)

    @classmethod
    def load(cls, path, root: str = "entity") -> "Taxonomy":
        return cls.from_tsv(Path(path).read_text(encoding="utf-8"), root=root)
