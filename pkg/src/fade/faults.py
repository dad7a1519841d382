"""Fault injection used to self-test the verification harness.

Set ``FADE_FAULT_INJECT`` to a comma separated list of fault names:

``softmax``  softmax_channels normalises the negated logits.
``vjp``      the conv2d vector-Jacobian product returns a sign-flipped weight gradient.
"""
import os

ENV_VAR = "FADE_FAULT_INJECT"


def active(name: str) -> bool:
    return name in os.environ.get(ENV_VAR, "").split(",")
