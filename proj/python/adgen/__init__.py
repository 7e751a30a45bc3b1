# Copyright 2026 The adgen Authors.
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

"""Generative ad recommender core (C++ extension)."""

from ._adgen import (
    DivergenceError,
    balanced_kmeans,
    beam_search,
    cli,
    config_keys,
    fit_ecpm_buckets,
    quantize,
    rspo_terms,
    simulate,
    topk_precut,
    verify,
)

__all__ = [
    "DivergenceError",
    "balanced_kmeans",
    "beam_search",
    "cli",
    "config_keys",
    "fit_ecpm_buckets",
    "quantize",
    "rspo_terms",
    "simulate",
    "topk_precut",
    "verify",
]
