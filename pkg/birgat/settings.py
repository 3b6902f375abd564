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

import os
from dataclasses import dataclass
from typing import Callable, Generic, TypeVar

__all__ = ("settings",)

T = TypeVar("T")


def convert_bool(value) -> bool:
    if isinstance(value, bool):
        return value
    value = str(value).strip().lower()
    if value in ("1", "true", "yes", "on"):
        return True
    if value in ("0", "false", "no", "off", ""):
        return False
    raise ValueError(f"cannot interpret {value!r} as a boolean")


def convert_int(value) -> int:
    return int(value)


def convert_str(value) -> str:
    return str(value)


# An environment-prioritized setting: an explicitly set value wins, then
# the environment variable, then the default.
@dataclass
class PrioritizedSetting(Generic[T]):
    name: str
    env_var: str
    default: T
    convert: Callable[[object], T]
    help: str = ""

    def __post_init__(self):
        self._user_value = None

    def set_value(self, value) -> None:
        self._user_value = self.convert(value)

    def unset_value(self) -> None:
        self._user_value = None

    def __call__(self) -> T:
        if self._user_value is not None:
            return self._user_value
        if self.env_var in os.environ:
            return self.convert(os.environ[self.env_var])
        return self.default


class BirgatRuntimeSettings:
    log_level: PrioritizedSetting[str] = PrioritizedSetting(
        "log-level",
        "BIRGAT_LOG_LEVEL",
        default="WARNING",
        convert=convert_str,
        help="""
        Root log level configured by the command line entry point.
        """,
    )

    eval_workers: PrioritizedSetting[int] = PrioritizedSetting(
        "eval-workers",
        "BIRGAT_EVAL_WORKERS",
        default=1,
        convert=convert_int,
        help="""
        Number of threads used to decode evaluation samples concurrently
        against frozen parameters.
        """,
    )

    long_tests: PrioritizedSetting[bool] = PrioritizedSetting(
        "long-tests",
        "BIRGAT_LONG_TESTS",
        default=False,
        convert=convert_bool,
        help="""
        Run the long end-to-end training tests (toy corpus accuracy,
        ablation and transfer direction checks).
        """,
    )

    def all(self):
        return {
            name: value
            for name, value in type(self).__dict__.items()
            if isinstance(value, PrioritizedSetting)
        }


settings = BirgatRuntimeSettings()
