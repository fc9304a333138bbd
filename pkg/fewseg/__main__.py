# Copyright (C) fewseg developers 2024-2026

from fewseg.cli import main

raise SystemExit(main())
