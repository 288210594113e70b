from wmsn.main import main

raise SystemExit(main())
