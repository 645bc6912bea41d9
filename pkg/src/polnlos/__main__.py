from polnlos.cli import main

raise SystemExit(main())
