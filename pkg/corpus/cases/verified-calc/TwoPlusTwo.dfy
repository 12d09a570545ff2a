lemma TwoPlusTwo()
  ensures 2 + 2 == 4
{
  calc {
    2 + 2;
    ==
    4;
  }
}
