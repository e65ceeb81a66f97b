# Copyright (C) 2024 The convexflow authors
# This file is part of convexflow
# SPDX-License-Identifier: Apache-2.0

from .cli import main

if __name__ == "__main__":
    main()
