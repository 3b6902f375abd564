# Copyright 2024 The birgat developers
#
# Licensed under the Apache License, Version 2.0 (the "License");
# you may not use this file except in compliance with the License.
# You may obtain a copy of the License at
#
#     http://www.apache.org/licenses/LICENSE-2.0
#
# Unless required by applicable law or agreed to in writing, software
# distributed under the License is distributed on an "AS IS" BASIS,
# WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
# See the License for the specific language governing permissions and
# limitations under the License.
from __future__ import annotations

import enum
import os
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

import networkx as nx
import numpy
import scipy.sparse
import yaml

from .errors import (
    DuplicateName,
    EmptySelection,
    MalformedDocument,
    OrphanItem,
    UnknownDomain,
)
from .types import index_ty
from .utils import indptr_to_rows


class ItemKind(enum.Enum):
    DOMAIN = "domain"
    INTENT = "intent"
    SLOT = "slot"

    @property
    def parent_kind(self) -> Optional["ItemKind"]:
        return _PARENT_KIND[self]


_PARENT_KIND = {
    ItemKind.DOMAIN: None,
    ItemKind.INTENT: ItemKind.DOMAIN,
    ItemKind.SLOT: ItemKind.INTENT,
}


def tokenize_name(text: str) -> Tuple[str, ...]:
    return tuple(str(text).split())


@dataclass(frozen=True)
class OntologyItem:
    id: int
    kind: ItemKind
    name_tokens: Tuple[str, ...]
    parent_id: Optional[int] = None
    description: Tuple[str, ...] = ()
    values: Tuple[Tuple[str, ...], ...] = ()

    @property
    def name(self) -> str:
        return " ".join(self.name_tokens)

    @property
    def hyphenated(self) -> str:
        return "-".join(self.name_tokens)


class RelationType(enum.IntEnum):
    SLOT_TO_INTENT = 0
    INTENT_TO_SLOT = 1
    SLOT_TO_DOMAIN = 2
    DOMAIN_TO_SLOT = 3
    INTENT_TO_DOMAIN = 4
    DOMAIN_TO_INTENT = 5
    SELF_LOOP = 6

    @property
    def inverse(self) -> "RelationType":
        if self is RelationType.SELF_LOOP:
            return self
        return RelationType(self.value ^ 1)


NUM_RELATIONS = len(RelationType)


class Ontology:
    """The domain -> intent -> slot hierarchy.

    Items are numbered depth first, so every domain owns a contiguous id
    block that holds the domain itself followed by its intents, each one
    followed by its slots. The object is immutable after construction.
    """

    def __init__(self, items: Sequence[OntologyItem]):
        self.items: Tuple[OntologyItem, ...] = tuple(items)
        self._children: Dict[Optional[int], List[int]] = {None: []}
        self._validate()
        self.domain_index: Dict[int, range] = self._domain_blocks()
        self._domain_of = numpy.empty(len(self.items), dtype=index_ty)
        for d, block in self.domain_index.items():
            self._domain_of[block.start : block.stop] = d

    def _validate(self) -> None:
        for pos, item in enumerate(self.items):
            if item.id != pos:
                raise MalformedDocument(
                    f"item ids must be dense, found {item.id} at {pos}"
                )
            if not item.name_tokens:
                raise MalformedDocument(f"item {pos} has an empty name")
            parent_kind = item.kind.parent_kind
            if parent_kind is None:
                if item.parent_id is not None:
                    raise OrphanItem(f"domain {item.name!r} has a parent")
            else:
                if item.parent_id is None or not (
                    0 <= item.parent_id < pos
                    and self.items[item.parent_id].kind is parent_kind
                ):
                    raise OrphanItem(
                        f"{item.kind.value} {item.name!r} needs a "
                        f"{parent_kind.value} parent"
                    )
            if item.values and item.kind is not ItemKind.SLOT:
                raise MalformedDocument(
                    f"only slots carry values, {item.name!r} is an "
                    f"{item.kind.value}"
                )
            siblings = self._children.setdefault(item.parent_id, [])
            if any(self.items[s].name_tokens == item.name_tokens
                   for s in siblings):
                raise DuplicateName(
                    f"{item.kind.value} {item.name!r} appears twice under "
                    "the same parent"
                )
            siblings.append(item.id)
            self._children.setdefault(item.id, [])

    def _domain_blocks(self) -> Dict[int, range]:
        blocks = {}
        domains = self._children[None]
        for k, d in enumerate(domains):
            stop = domains[k + 1] if k + 1 < len(domains) else len(self.items)
            blocks[d] = range(d, stop)
        for d, block in blocks.items():
            for i in block[1:]:
                item = self.items[i]
                parent = self.items[item.parent_id]
                top = parent if parent.parent_id is None else (
                    self.items[parent.parent_id]
                )
                if top.id != d:
                    raise MalformedDocument(
                        f"item {item.name!r} lies outside its domain block"
                    )
        return blocks

    def __len__(self) -> int:
        return len(self.items)

    def __getitem__(self, item_id: int) -> OntologyItem:
        return self.items[item_id]

    def __iter__(self):
        return iter(self.items)

    def __eq__(self, other) -> bool:
        return isinstance(other, Ontology) and self.items == other.items

    def __hash__(self) -> int:
        return hash(self.items)

    def __repr__(self) -> str:
        return (
            f"Ontology(domains={len(self.domains)}, "
            f"intents={len(self.intents)}, slots={len(self.slots)})"
        )

    @property
    def domains(self) -> List[int]:
        return list(self._children[None])

    @property
    def intents(self) -> List[int]:
        return [i.id for i in self.items if i.kind is ItemKind.INTENT]

    @property
    def slots(self) -> List[int]:
        return [i.id for i in self.items if i.kind is ItemKind.SLOT]

    def children(self, item_id: Optional[int]) -> Tuple[int, ...]:
        return tuple(self._children.get(item_id, ()))

    def domain_of(self, item_id: int) -> int:
        return int(self._domain_of[item_id])

    def kind_of(self, item_id: int) -> ItemKind:
        return self.items[item_id].kind

    def lookup(
        self, kind: ItemKind, name_tokens: Sequence[str], parent=None
    ) -> Optional[int]:
        """Id of the ``kind`` item named ``name_tokens`` under ``parent``
        (None for domains), or None."""
        name_tokens = tuple(name_tokens)
        for child in self._children.get(parent, ()):
            item = self.items[child]
            if item.kind is kind and item.name_tokens == name_tokens:
                return child
        return None

    def domain_by_name(self, name: str) -> int:
        found = self.lookup(ItemKind.DOMAIN, tokenize_name(name))
        if found is None:
            raise UnknownDomain(f"no domain named {name!r}")
        return found

    def graph(self) -> nx.DiGraph:
        g = nx.DiGraph()
        for item in self.items:
            g.add_node(item.id, kind=item.kind, name=item.name)
            if item.parent_id is not None:
                g.add_edge(item.parent_id, item.id)
        return g

    def to_document(self) -> dict:
        def node(item: OntologyItem, child_key: Optional[str]) -> dict:
            out = {"name": item.name}
            if item.description:
                out["description"] = " ".join(item.description)
            if item.values:
                out["values"] = [" ".join(v) for v in item.values]
            if child_key is not None:
                grandchild = "slots" if child_key == "intents" else None
                out[child_key] = [
                    node(self.items[c], grandchild)
                    for c in self._children[item.id]
                ]
            return out

        return {
            "domains": [node(self.items[d], "intents") for d in self.domains]
        }


# Ontology documents. The nested form mirrors the hierarchy; the flat
# form lists items with an explicit parent path ("domain" for intents,
# "domain/intent" for slots) and is what external tools usually emit.

_KEYS = {
    "document": {"domains", "items"},
    ItemKind.DOMAIN: {"name", "description", "intents"},
    ItemKind.INTENT: {"name", "description", "slots"},
    ItemKind.SLOT: {"name", "description", "values"},
    "flat": {"kind", "name", "parent", "description", "values"},
}


def _check_keys(node, allowed, where: str) -> None:
    if not isinstance(node, Mapping):
        raise MalformedDocument(f"{where}: expected a mapping")
    unknown = set(node) - allowed
    if unknown:
        raise MalformedDocument(f"{where}: unknown keys {sorted(unknown)}")
    if "name" in allowed and "name" not in node and where != "document":
        raise MalformedDocument(f"{where}: missing 'name'")


def _as_list(node, key: str, where: str) -> list:
    value = node.get(key) or []
    if not isinstance(value, list):
        raise MalformedDocument(f"{where}: '{key}' must be a list")
    return value


@dataclass
class _Draft:
    kind: ItemKind
    name: Tuple[str, ...]
    description: Tuple[str, ...] = ()
    values: Tuple[Tuple[str, ...], ...] = ()
    children: List["_Draft"] = field(default_factory=list)


def _draft(node, kind: ItemKind, where: str) -> _Draft:
    _check_keys(node, _KEYS[kind], where)
    return _Draft(
        kind=kind,
        name=tokenize_name(node["name"]),
        description=tokenize_name(node.get("description") or ""),
        values=tuple(
            tokenize_name(v) for v in _as_list(node, "values", where)
        ),
    )


def _nested_drafts(doc) -> List[_Draft]:
    drafts = []
    for k, dnode in enumerate(_as_list(doc, "domains", "document")):
        where = f"domains[{k}]"
        domain = _draft(dnode, ItemKind.DOMAIN, where)
        for j, inode in enumerate(_as_list(dnode, "intents", where)):
            iwhere = f"{where}.intents[{j}]"
            intent = _draft(inode, ItemKind.INTENT, iwhere)
            for s, snode in enumerate(_as_list(inode, "slots", iwhere)):
                intent.children.append(
                    _draft(snode, ItemKind.SLOT, f"{iwhere}.slots[{s}]")
                )
            domain.children.append(intent)
        drafts.append(domain)
    return drafts


def _flat_drafts(doc) -> List[_Draft]:
    domains: Dict[Tuple[str, ...], _Draft] = {}
    intents: Dict[Tuple[Tuple[str, ...], ...], _Draft] = {}
    pending = []
    for k, node in enumerate(_as_list(doc, "items", "document")):
        where = f"items[{k}]"
        _check_keys(node, _KEYS["flat"], where)
        try:
            kind = ItemKind(node.get("kind"))
        except ValueError:
            raise MalformedDocument(
                f"{where}: kind must be domain, intent or slot"
            ) from None
        fields = {k: v for k, v in node.items() if k not in ("kind", "parent")}
        if "values" in fields and kind is not ItemKind.SLOT:
            raise MalformedDocument(f"{where}: only slots carry values")
        pending.append((where, kind, _draft(fields, kind, where), node))
    # Parents are resolved after all items are read, so a child may precede
    # its parent in the list.
    for where, kind, draft, node in pending:
        if kind is ItemKind.DOMAIN:
            if "parent" in node:
                raise OrphanItem(f"{where}: a domain has no parent")
            if draft.name in domains:
                raise DuplicateName(f"domain {' '.join(draft.name)!r}")
            domains[draft.name] = draft
    for level in (ItemKind.INTENT, ItemKind.SLOT):
        for where, kind, draft, node in pending:
            if kind is not level:
                continue
            path = tuple(
                tokenize_name(p)
                for p in str(node.get("parent", "")).split("/")
                if p.strip()
            )
            parent = None
            if kind is ItemKind.INTENT and len(path) == 1:
                parent = domains.get(path[0])
            elif kind is ItemKind.SLOT and len(path) == 2:
                parent = intents.get(path)
            if parent is None:
                raise OrphanItem(
                    f"{where}: {kind.value} {' '.join(draft.name)!r} names "
                    f"a missing parent {node.get('parent')!r}"
                )
            parent.children.append(draft)
            if kind is ItemKind.INTENT:
                intents[path + (draft.name,)] = draft
    return list(domains.values())


def _number(drafts: Iterable[_Draft]) -> List[OntologyItem]:
    items: List[OntologyItem] = []

    def visit(draft: _Draft, parent: Optional[int]) -> None:
        item_id = len(items)
        items.append(
            OntologyItem(
                id=item_id,
                kind=draft.kind,
                name_tokens=draft.name,
                parent_id=parent,
                description=draft.description,
                values=draft.values,
            )
        )
        for child in draft.children:
            visit(child, item_id)

    for d in drafts:
        visit(d, None)
    return items


def _read_source(source):
    if isinstance(source, Mapping):
        return source
    if isinstance(source, os.PathLike) or (
        isinstance(source, str) and "\n" not in source
        and os.path.exists(source)
    ):
        with open(source, encoding="utf-8") as f:
            text = f.read()
    elif hasattr(source, "read"):
        text = source.read()
    else:
        text = source
    try:
        return yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise MalformedDocument(f"not a valid document: {exc}") from None


def load_ontology(source) -> Ontology:
    """Load and validate an ontology document.

    ``source`` is a path, an open text stream, the document text, or an
    already parsed mapping. Ids are assigned in document order, depth
    first, so domain blocks are contiguous.
    """
    doc = _read_source(source)
    _check_keys(doc, _KEYS["document"], "document")
    if "domains" in doc and "items" in doc:
        raise MalformedDocument("document has both 'domains' and 'items'")
    drafts = _flat_drafts(doc) if "items" in doc else _nested_drafts(doc)
    return Ontology(_number(drafts))


@dataclass(frozen=True)
class RelationTable:
    """Sparse pairwise relations among ontology items.

    Row i lists the neighbourhood N(i) in column order; ``matrix.data``
    holds RelationType codes. Tables built for the untyped (GAT) mode
    carry no codes, only the neighbourhood structure.
    """

    matrix: scipy.sparse.csr_array
    typed: bool = True

    @property
    def size(self) -> int:
        return self.matrix.shape[0]

    @property
    def indptr(self) -> numpy.ndarray:
        return self.matrix.indptr.astype(index_ty)

    @property
    def indices(self) -> numpy.ndarray:
        return self.matrix.indices.astype(index_ty)

    @property
    def codes(self) -> numpy.ndarray:
        return self.matrix.data.astype(index_ty)

    @property
    def rows(self) -> numpy.ndarray:
        return indptr_to_rows(self.matrix.indptr)

    def __len__(self) -> int:
        return int(self.matrix.nnz)

    def neighbors(self, i: int) -> numpy.ndarray:
        lo, hi = self.matrix.indptr[i], self.matrix.indptr[i + 1]
        return self.indices[lo:hi]

    def get(self, i: int, j: int) -> Optional[RelationType]:
        lo, hi = self.matrix.indptr[i], self.matrix.indptr[i + 1]
        hit = numpy.nonzero(self.matrix.indices[lo:hi] == j)[0]
        if hit.size == 0:
            return None
        assert self.typed, "untyped tables only record neighbourhoods"
        return RelationType(int(self.matrix.data[lo + hit[0]]))

    def entries(self) -> Dict[Tuple[int, int], RelationType]:
        assert self.typed
        return {
            (int(i), int(j)): RelationType(int(c))
            for i, j, c in zip(self.rows, self.indices, self.codes)
        }


def _relation_graph(ont: Ontology) -> nx.DiGraph:
    g = nx.DiGraph()
    g.add_nodes_from(range(len(ont)))

    def link(a, b, rel: RelationType):
        # Edge weights are stored shifted by one so that code 0 survives
        # the sparse conversion.
        g.add_edge(a, b, rel=int(rel) + 1)
        g.add_edge(b, a, rel=int(rel.inverse) + 1)

    for item in ont:
        g.add_edge(item.id, item.id, rel=int(RelationType.SELF_LOOP) + 1)
        if item.kind is ItemKind.INTENT:
            link(item.id, item.parent_id, RelationType.INTENT_TO_DOMAIN)
        elif item.kind is ItemKind.SLOT:
            intent = ont[item.parent_id]
            link(item.id, intent.id, RelationType.SLOT_TO_INTENT)
            link(item.id, intent.parent_id, RelationType.SLOT_TO_DOMAIN)
    return g


def _to_csr(g: nx.DiGraph, n: int) -> scipy.sparse.csr_array:
    matrix = nx.to_scipy_sparse_array(
        g, nodelist=range(n), weight="rel", dtype=index_ty, format="csr"
    )
    matrix = scipy.sparse.csr_array(matrix)
    matrix.sort_indices()
    matrix.data = matrix.data - 1
    return matrix


def build_relation_table(ont: Ontology) -> RelationTable:
    """Self-loops plus slot-intent, slot-domain and intent-domain relations
    in both directions. Sibling intents only meet through their domain,
    and nothing crosses a domain boundary."""
    return RelationTable(_to_csr(_relation_graph(ont), len(ont)))


def build_domain_block_table(ont: Ontology) -> RelationTable:
    """Every ordered pair of items inside one domain block."""
    g = nx.DiGraph()
    g.add_nodes_from(range(len(ont)))
    for block in ont.domain_index.values():
        g.add_edges_from(
            ((i, j) for i in block for j in block), rel=1
        )
    return RelationTable(_to_csr(g, len(ont)), typed=False)


def domain_subset(ont: Ontology, domains: Iterable[int]) -> Ontology:
    """Re-indexed sub-ontology holding only the listed domains' blocks, in
    their original order."""
    domains = set(int(d) for d in domains)
    if not domains:
        raise EmptySelection("domain selection is empty")
    unknown = domains - set(ont.domain_index)
    if unknown:
        raise UnknownDomain(f"not domain ids: {sorted(unknown)}")
    remap: Dict[int, int] = {}
    items = []
    for d, block in ont.domain_index.items():
        if d not in domains:
            continue
        for old in block:
            item = ont[old]
            remap[old] = len(items)
            items.append(
                OntologyItem(
                    id=remap[old],
                    kind=item.kind,
                    name_tokens=item.name_tokens,
                    parent_id=None
                    if item.parent_id is None
                    else remap[item.parent_id],
                    description=item.description,
                    values=item.values,
                )
            )
    return Ontology(items)


# subset_index maps ids of a domain_subset result back to the full ontology.
def subset_index(ont: Ontology, domains: Iterable[int]) -> numpy.ndarray:
    domains = set(int(d) for d in domains)
    return numpy.concatenate(
        [
            numpy.arange(block.start, block.stop, dtype=index_ty)
            for d, block in ont.domain_index.items()
            if d in domains
        ]
    )
