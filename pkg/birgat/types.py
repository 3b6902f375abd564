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

import numpy

# Common dtypes. Everything numeric runs in double precision; gradient
# checks depend on it.
real_ty = numpy.dtype(numpy.float64)
index_ty = numpy.dtype(numpy.int64)
mask_ty = numpy.dtype(numpy.bool_)
