# Copyright 2023 The winbid Authors
# SPDX-License-Identifier: Apache-2
from winbid.common import __version__
