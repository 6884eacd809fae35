"""`python -m podhive ...` dispatches to the CLI."""
from podhive.cli import main

raise SystemExit(main())
