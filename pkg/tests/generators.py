"""Seeded generators for property-style tests (roundtrips, fuzzing)."""

from __future__ import annotations

import random

from oranlab.e2codec import (
    ActionType, Cause, CauseKind, ControlAcknowledge, ControlFailure,
    ControlRequest, E2apPdu, ErrorIndication, Indication, IndicationType,
    RanFunction, RicAction, RicRequestId, ServiceUpdate, ServiceUpdateAck,
    SetupRequest, SetupResponse, SubsequentAction, SubsequentType,
    SubscriptionDeleteRequest, SubscriptionDeleteResponse,
    SubscriptionFailure, SubscriptionRequest, SubscriptionResponse,
    TimeToWait,
)


def _rid(rng: random.Random) -> RicRequestId:
    return RicRequestId(rng.randrange(2**32), rng.randrange(2**32))


def _blob(rng: random.Random, max_len: int = 32) -> bytes:
    return rng.randbytes(rng.randrange(max_len + 1))


def _name(rng: random.Random) -> str:
    return "".join(rng.choice("abcdefgh-0123456789") for _ in range(rng.randrange(1, 12)))


def _cause(rng: random.Random) -> Cause:
    return Cause(rng.choice(list(CauseKind)), _name(rng) if rng.random() < 0.5 else "")


def _function(rng: random.Random, function_id: int) -> RanFunction:
    return RanFunction(function_id, _name(rng), rng.randrange(4), _blob(rng))


def _functions(rng: random.Random) -> tuple[RanFunction, ...]:
    n = rng.randrange(4)
    ids = rng.sample(range(64), n)
    return tuple(_function(rng, i) for i in ids)


def _action(rng: random.Random, action_id: int) -> RicAction:
    subsequent = None
    if rng.random() < 0.5:
        subsequent = SubsequentAction(rng.choice(list(SubsequentType)), rng.choice(list(TimeToWait)))
    return RicAction(action_id, rng.choice(list(ActionType)), _blob(rng), subsequent)


def _actions(rng: random.Random) -> tuple[RicAction, ...]:
    n = rng.randrange(1, 4)
    ids = rng.sample(range(256), n)
    return tuple(_action(rng, i) for i in ids)


def _id_list(rng: random.Random) -> tuple[int, ...]:
    return tuple(rng.randrange(2**32) for _ in range(rng.randrange(4)))


def random_pdu(rng: random.Random) -> E2apPdu:
    """One pseudo-random valid PDU, drawn across every message type."""
    choice = rng.randrange(14)
    if choice == 0:
        body = SetupRequest(_name(rng), _functions(rng))
    elif choice == 1:
        body = SetupResponse(_id_list(rng), _id_list(rng))
    elif choice == 2:
        body = SubscriptionRequest(_rid(rng), rng.randrange(64), _blob(rng), _actions(rng))
    elif choice == 3:
        body = SubscriptionResponse(_rid(rng), _id_list(rng), _id_list(rng))
    elif choice == 4:
        body = SubscriptionFailure(_rid(rng), _cause(rng))
    elif choice == 5:
        body = SubscriptionDeleteRequest(_rid(rng), rng.randrange(64))
    elif choice == 6:
        body = SubscriptionDeleteResponse(_rid(rng))
    elif choice == 7:
        ind_type = rng.choice(list(IndicationType))
        call_pid = _blob(rng, 8)
        body = Indication(
            _rid(rng), rng.randrange(64), rng.randrange(256), ind_type,
            _blob(rng), _blob(rng),
            rng.randrange(2**32) if rng.random() < 0.7 else None,
            call_pid if (ind_type == IndicationType.INSERT or rng.random() < 0.3) else None)
    elif choice == 8:
        body = ControlRequest(
            _rid(rng), rng.randrange(64), _blob(rng), _blob(rng),
            _blob(rng, 8) if rng.random() < 0.5 else None, rng.random() < 0.8)
    elif choice == 9:
        body = ControlAcknowledge(_rid(rng), _blob(rng))
    elif choice == 10:
        body = ControlFailure(_rid(rng), _cause(rng))
    elif choice == 11:
        body = ServiceUpdate(_functions(rng), _functions(rng), _id_list(rng))
    elif choice == 12:
        body = ServiceUpdateAck(_id_list(rng), _id_list(rng))
    else:
        body = ErrorIndication(_cause(rng))
    return E2apPdu.wrap(body)
