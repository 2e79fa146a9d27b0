from __future__ import annotations

import enum


class Role(str, enum.Enum):
    BUYER = "buyer"
    SELLER = "seller"

    @property
    def opponent(self) -> Role:
        return Role.SELLER if self is Role.BUYER else Role.BUYER
