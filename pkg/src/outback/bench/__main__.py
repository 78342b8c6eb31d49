from outback.bench.cli import main

raise SystemExit(main())
