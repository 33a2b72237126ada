"""Minutes-of-meeting documents: single-writer editing and sharing.

Each device owns a ``MoMStore`` with two lists. *My MoMs* holds documents the
device created and may edit; *Shared MoMs* holds read-only copies other
Scribes sent over and this device accepted. Live text-pad views received
while sitting in a session are kept apart (``live``) and never become files
on their own.
"""

from __future__ import annotations

import enum
import hashlib
from dataclasses import dataclass, field, replace

from .errors import PbnError, Signal
from .identity import DeviceId

ONLY_SCRIBE_CAN_EDIT = "Only Scribe Can Edit"


class MoMError(PbnError):
    pass


class EmptyTitle(MoMError):
    pass


class DuplicateTitle(MoMError):
    pass


class NotOwner(MoMError):
    def __init__(self, message: str = ONLY_SCRIBE_CAN_EDIT):
        super().__init__(message)


class ReShareForbidden(MoMError):
    pass


class UnknownDocument(MoMError):
    pass


class WrongRecipient(MoMError):
    pass


class NotFound(MoMError):
    pass


class StaleUpdate(Signal):
    pass


class ListKind(enum.Enum):
    MY_MOMS = "my_moms"
    SHARED_MOMS = "shared_moms"


@dataclass(frozen=True)
class MoMDocument:
    doc_id: str
    title: str
    owned_by: DeviceId
    content: str = ""
    revision: int = 0
    shared_with: tuple[DeviceId, ...] = ()
    list_kind: ListKind = ListKind.MY_MOMS

    @property
    def digest(self) -> str:
        return content_digest(self.content)


def content_digest(content: str) -> str:
    return hashlib.sha256(content.encode("utf-8")).hexdigest()[:16]


@dataclass(frozen=True)
class RealTimeUpdate:
    doc_id: str
    # the revision ``new_content`` corresponds to on the owner's side
    base_revision: int
    new_content: str
    origin: DeviceId
    title: str = ""


@dataclass(frozen=True)
class FileOffer:
    offer_id: str
    sender: DeviceId
    recipient: DeviceId
    doc_id: str
    title: str
    content: str
    revision: int
    owned_by: DeviceId


class Reply(enum.Enum):
    ACCEPT = "accept"
    REJECT = "reject"


@dataclass(frozen=True)
class OfferResponse:
    offer_id: str
    doc_id: str
    recipient: DeviceId
    owner: DeviceId
    reply: Reply


class FileOp(enum.Enum):
    READ = "read"
    RENAME = "rename"
    DELETE = "delete"


@dataclass
class MoMStore:
    owner: DeviceId
    my_moms: dict[str, MoMDocument] = field(default_factory=dict)
    shared_moms: dict[str, MoMDocument] = field(default_factory=dict)
    live: dict[str, MoMDocument] = field(default_factory=dict)
    created: int = 0

    def lists(self):
        return (self.my_moms, self.shared_moms)

    def find(self, doc_id: str) -> MoMDocument:
        for lst in self.lists():
            if doc_id in lst:
                return lst[doc_id]
        raise NotFound(f"{doc_id} not on {self.owner}")

    def by_title(self, title: str, live: bool = False) -> MoMDocument:
        """First document with ``title``, My MoMs before Shared MoMs.

        ``live`` also searches the session views, last.
        """
        for lst in self.lists() + ((self.live,) if live else ()):
            for doc in sorted(lst.values(), key=lambda d: d.doc_id):
                if doc.title == title:
                    return doc
        raise NotFound(f"no document titled {title!r} on {self.owner}")

    def put(self, doc: MoMDocument) -> None:
        target = self.my_moms if doc.list_kind is ListKind.MY_MOMS else self.shared_moms
        target[doc.doc_id] = doc


def create_mom(store: MoMStore, title: str) -> MoMDocument:
    if not title:
        raise EmptyTitle("a MoM needs a file name")
    if any(d.title == title for d in store.my_moms.values()):
        raise DuplicateTitle(f"{title!r} already in {store.owner}'s My MoMs")
    store.created += 1
    doc = MoMDocument(doc_id=f"{store.owner.canonical}:{store.created}", title=title, owned_by=store.owner)
    store.put(doc)
    return doc


def edit_mom(actor: DeviceId, doc: MoMDocument, new_content: str) -> tuple[MoMDocument, RealTimeUpdate]:
    """Commit an edit. Unchanged content still bumps the revision (auto-save)."""
    if actor != doc.owned_by or doc.list_kind is not ListKind.MY_MOMS:
        raise NotOwner()
    new = replace(doc, content=new_content, revision=doc.revision + 1)
    update = RealTimeUpdate(
        doc_id=doc.doc_id,
        base_revision=new.revision,
        new_content=new_content,
        origin=actor,
        title=doc.title,
    )
    return new, update


def apply_realtime_update(member_copy: MoMDocument | None, update: RealTimeUpdate) -> MoMDocument:
    """Replace a member's read-only view with the Scribe's latest text.

    ``None`` starts a fresh view. Updates older than the view raise
    ``StaleUpdate`` and leave it alone.
    """
    if member_copy is None:
        return MoMDocument(
            doc_id=update.doc_id,
            title=update.title,
            owned_by=update.origin,
            content=update.new_content,
            revision=update.base_revision,
            list_kind=ListKind.SHARED_MOMS,
        )
    if member_copy.doc_id != update.doc_id:
        raise UnknownDocument(f"update for {update.doc_id} applied to {member_copy.doc_id}")
    if update.origin != member_copy.owned_by:
        raise NotOwner()
    if update.base_revision < member_copy.revision:
        raise StaleUpdate(f"{update.doc_id}: rev {update.base_revision} < {member_copy.revision}")
    return replace(member_copy, content=update.new_content, revision=update.base_revision)


def share_mom(
    owner: DeviceId,
    doc: MoMDocument,
    recipients: list[DeviceId],
    known_peers=None,
) -> tuple[MoMDocument, list[FileOffer]]:
    """Offer a copy of ``doc`` to each recipient.

    ``shared_with`` is left untouched here; it grows only as acceptances
    come back (see ``record_acceptance``).
    """
    if doc.list_kind is ListKind.SHARED_MOMS:
        raise ReShareForbidden(f"{doc.title!r} was shared with {owner}; it cannot be shared on")
    if owner != doc.owned_by:
        raise NotOwner()
    if known_peers is not None:
        unknown = [r for r in recipients if r not in set(known_peers)]
        if unknown:
            raise NotFound(f"unknown recipients: {', '.join(map(str, unknown))}")
    offers = [
        FileOffer(
            offer_id=f"{doc.doc_id}@{doc.revision}->{r.canonical}",
            sender=owner,
            recipient=r,
            doc_id=doc.doc_id,
            title=doc.title,
            content=doc.content,
            revision=doc.revision,
            owned_by=doc.owned_by,
        )
        for r in recipients
        if r != owner
    ]
    return doc, offers


def respond_to_offer(store: MoMStore, offer: FileOffer, reply: Reply) -> OfferResponse:
    if offer.recipient != store.owner:
        raise WrongRecipient(f"offer for {offer.recipient} answered by {store.owner}")
    if reply is Reply.ACCEPT and offer.doc_id not in store.shared_moms:
        store.shared_moms[offer.doc_id] = MoMDocument(
            doc_id=offer.doc_id,
            title=offer.title,
            owned_by=offer.owned_by,
            content=offer.content,
            revision=offer.revision,
            list_kind=ListKind.SHARED_MOMS,
        )
    return OfferResponse(offer.offer_id, offer.doc_id, store.owner, offer.owned_by, reply)


def record_acceptance(store: MoMStore, response: OfferResponse) -> MoMDocument | None:
    """Owner side of an acceptance: append the recipient to SHARED WITH once.

    Returns the updated document, or None if the owner no longer has it.
    """
    doc = store.my_moms.get(response.doc_id)
    if doc is None or response.reply is not Reply.ACCEPT:
        return doc
    if response.recipient in doc.shared_with:
        return doc
    doc = replace(doc, shared_with=doc.shared_with + (response.recipient,))
    store.my_moms[doc.doc_id] = doc
    return doc


def file_operation(store: MoMStore, doc_id: str, op: FileOp, new_title: str | None = None):
    """Read, rename or delete the device's own copy; other copies are untouched."""
    doc = store.find(doc_id)
    if op is FileOp.READ:
        return doc.content
    lst = store.my_moms if doc.list_kind is ListKind.MY_MOMS else store.shared_moms
    if op is FileOp.DELETE:
        del lst[doc_id]
        return None
    if not new_title:
        raise EmptyTitle("rename needs a new title")
    if any(d.title == new_title and d.doc_id != doc_id for d in lst.values()):
        raise DuplicateTitle(f"{new_title!r} already exists")
    lst[doc_id] = replace(doc, title=new_title)
    return lst[doc_id]
