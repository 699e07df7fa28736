from gqarch.cli import main

raise SystemExit(main())
